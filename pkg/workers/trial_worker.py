"""
试验工作者模块

把独立的试验（模拟研究的各次划分）分发给固定数量的工作者：
- 任务放入 asyncio.Queue，threads 个工作者协程各自取任务
- 每个任务在线程中执行（asyncio.to_thread），numpy 计算期间释放 GIL
- 结果按任务下标写回，返回顺序与输入一致；随机流由调用方按任务预先派生，结果与调度顺序无关
"""

import asyncio
import logging
from typing import Callable, List, Optional, Sequence, TypeVar

from logic.errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")

# 进度日志的间隔（占总任务数的比例）
_PROGRESS_STEP = 0.1


async def trial_worker(
    name: str,
    fn: Callable[[T], R],
    queue: "asyncio.Queue[Optional[tuple]]",
    results: List[Optional[R]],
    progress: dict,
) -> None:
    """从队列取 (下标, 任务) 执行，取到 None 时退出。"""
    logging.debug(f"试验工作者 [{name}] 已启动")
    while True:
        item = await queue.get()
        try:
            if item is None:
                return
            idx, task = item
            results[idx] = await asyncio.to_thread(fn, task)
            progress["done"] += 1
            _log_progress(progress)
        finally:
            queue.task_done()


def _log_progress(progress: dict) -> None:
    done, total = progress["done"], progress["total"]
    step = max(1, int(total * _PROGRESS_STEP))
    if done % step == 0 or done == total:
        logging.info(f"试验进度: {done}/{total}")


async def run_trials(fn: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    queue: "asyncio.Queue[Optional[tuple]]" = asyncio.Queue()
    results: List[Optional[R]] = [None] * len(items)
    progress = {"done": 0, "total": len(items)}
    for idx, item in enumerate(items):
        queue.put_nowait((idx, item))
    n_workers = max(1, min(threads, len(items)))
    for _ in range(n_workers):
        queue.put_nowait(None)

    workers = [
        asyncio.create_task(trial_worker(f"W{i + 1}", fn, queue, results, progress))
        for i in range(n_workers)
    ]
    try:
        await asyncio.gather(*workers)
    except Exception:
        for w in workers:
            if not w.done():
                w.cancel()
        await asyncio.gather(*workers, return_exceptions=True)
        raise
    return results  # type: ignore[return-value]


def make_trial_map(threads: int) -> Callable[[Callable[[T], R], Sequence[T]], List[R]]:
    """
    生成 run_study 可用的 trial_map。

    threads == 1 时在当前线程顺序执行；否则启动事件循环并行执行。
    """
    if threads < 1:
        raise ConfigError("InvalidConfig", f"threads 必须 ≥ 1，当前 {threads}")

    def trial_map(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        if threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        logging.info(f"并行执行 {len(items)} 次试验，工作者数 {min(threads, len(items))}")
        return asyncio.run(run_trials(fn, items, threads))

    return trial_map
