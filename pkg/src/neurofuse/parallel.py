"""Order-preserving parallel map for pure per-item work."""

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, workers=1):
    """Map fn over items, optionally on a thread pool.

    Results keep input order; fn must be pure (or internally seeded per
    item) so the outcome is independent of worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
