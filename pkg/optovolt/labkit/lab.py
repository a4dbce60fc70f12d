"""
The main class in this module is `SensorLab`. See its docstring for more information.
"""

import asyncio
import contextvars
import logging
import os
from asyncio import Task
from contextvars import ContextVar
from typing import Any, Awaitable, Callable, Iterable, Optional, TypeVar, Union

from optovolt.optovolt_typing import PointEstimatedEventHandler

logger = logging.getLogger(__name__)

T = TypeVar("T")


class SensorLab:
    """
    The context in which measurement pipelines run. It is an async context manager that holds the process-wide
    defaults (how many sweep points may be evaluated at once, at which level background failures are logged), keeps
    track of the tasks it schedules and makes sure all of them finish before the context exits, and dispatches
    `on_point_estimated` events to the registered handlers.
    """

    max_workers: int
    log_level_for_errors: int
    on_point_estimated_handlers: list[PointEstimatedEventHandler]
    child_tasks: set[Task]

    _current: ContextVar[Optional["SensorLab"]] = ContextVar("SensorLab._current", default=None)

    def __init__(
        self,
        max_workers: Optional[int] = None,
        log_level_for_errors: int = logging.ERROR,
        on_point_estimated: Union[PointEstimatedEventHandler, Iterable[PointEstimatedEventHandler]] = (),
    ) -> None:
        if max_workers is not None and max_workers < 1:
            raise ValueError(f"max_workers must be at least 1, got {max_workers}")

        self.max_workers = max_workers or os.cpu_count() or 1
        self.log_level_for_errors = log_level_for_errors
        self.on_point_estimated_handlers: list[PointEstimatedEventHandler] = (
            [on_point_estimated] if callable(on_point_estimated) else [*on_point_estimated]
        )
        self.child_tasks: set[Task] = set()

        self._semaphore: Optional[asyncio.Semaphore] = None
        self._previous_ctx_token: Optional[contextvars.Token] = None

    @classmethod
    def get_current(cls) -> "SensorLab":
        """
        Get the currently active lab. If no lab is active, a fresh lab with default settings is returned (it is not
        activated, so tasks scheduled on it are not awaited by anybody but the caller).
        """
        current = cls._current.get()
        if current is None:
            return cls()
        if not isinstance(current, cls):
            raise TypeError(
                f"You seem to have done `async with {type(current).__name__}():` (or similar), "
                f"but `async with {cls.__name__}():` is expected instead."
            )
        return current

    def run(self, awaitable: Awaitable[T]) -> T:
        """
        Run an awaitable in this lab. This method is blocking. It also creates a new event loop.
        """
        return asyncio.run(self.arun(awaitable))

    async def arun(self, awaitable: Awaitable[T]) -> T:
        """
        Run an awaitable in this lab.
        """
        async with self:
            return await awaitable

    def on_point_estimated(self, handler: PointEstimatedEventHandler) -> PointEstimatedEventHandler:
        """
        Add a handler to be called every time a sweep point is estimated. Can be used as a decorator.
        """
        self.on_point_estimated_handlers.append(handler)
        return handler

    def trigger_point_estimated(self, point: Any) -> None:
        """
        Schedule all the `on_point_estimated` handlers for the given point. Failures of the handlers are logged and
        never propagate into the sweep.
        """
        for handler in self.on_point_estimated_handlers:
            self.start_asap(handler(point), suppress_errors=True, log_level_for_errors=self.log_level_for_errors)

    def start_asap(
        self,
        awaitable: Awaitable[T],
        suppress_errors: bool = False,
        log_level_for_errors: int = logging.DEBUG,
    ) -> Task:
        """
        Schedule a task in this lab. "Scheduling" a task this way instead of just creating it with
        `asyncio.create_task()` allows the lab to keep track of the child tasks and to wait for them to finish
        before finalizing.
        """

        async def awaitable_wrapper() -> Any:
            # pylint: disable=broad-except
            # noinspection PyBroadException
            try:
                return await awaitable
            except Exception:
                logger.log(
                    log_level_for_errors,
                    "AN ERROR OCCURRED IN AN ASYNC BACKGROUND TASK",
                    exc_info=True,
                )
                if not suppress_errors:
                    raise
            except BaseException:
                if not suppress_errors:
                    raise
            finally:
                self.child_tasks.discard(task)

        task = asyncio.create_task(awaitable_wrapper())
        self.child_tasks.add(task)
        return task

    async def ato_thread(self, func: Callable[..., T], *args, **kwargs) -> T:
        """
        Run a blocking (numerical) function in a worker thread. At most `max_workers` such functions run at the same
        time within one lab.
        """
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.max_workers)
        async with self._semaphore:
            return await asyncio.to_thread(func, *args, **kwargs)

    def activate(self) -> "SensorLab":
        """
        Activate the lab. This is called by `async with` but can be called as a regular method as well in cases where
        it is not possible to use the `async with` block.
        """
        if self._previous_ctx_token:
            raise RuntimeError("SensorLab is not reentrant")
        self._previous_ctx_token = self._current.set(self)  # <- this is the context switch
        return self

    async def aflush_tasks(self) -> None:
        """
        Wait for all the child tasks to finish.
        """
        while self.child_tasks:
            await asyncio.gather(
                *self.child_tasks,
                return_exceptions=True,  # this prevents waiting until the first exception and then giving up
            )

    async def afinalize(self) -> None:
        """
        Finalize the lab (wait for all the child tasks to finish and reset the context). This method is called
        automatically at the end of the `async with` block.
        """
        await self.aflush_tasks()
        self._current.reset(self._previous_ctx_token)
        self._previous_ctx_token = None
        # a semaphore belongs to the event loop it was first used in
        self._semaphore = None

    async def __aenter__(self) -> "SensorLab":
        return self.activate()

    async def __aexit__(self, exc_type, exc_val, exc_tb) -> None:
        await self.afinalize()
