"""Ordered parallel map used by the Monte Carlo loops."""

from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers=1):
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, items))
