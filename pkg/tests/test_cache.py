import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from lulc.cache import RasterCache
from lulc.raster_core import Raster, write_portable


def test_repeated_reads_hit_the_cache(tmp_path, make_raster):
    path = tmp_path / "scene.lkr"
    write_portable(make_raster(), path)
    cache = RasterCache(maxsize=2)
    first = cache.read(path)
    assert cache.read(path) is first
    assert (cache.hits, cache.misses) == (1, 1)


def test_changed_file_is_reread(tmp_path):
    path = tmp_path / "scene.lkr"
    write_portable(Raster.from_array(np.zeros((3, 3, 1)), ["b"]), path)
    cache = RasterCache()
    cache.read(path)
    write_portable(Raster.from_array(np.ones((3, 3, 1)), ["b"]), path)
    stat = path.stat()
    os.utime(path, ns=(stat.st_atime_ns, stat.st_mtime_ns + 1_000_000))
    assert cache.read(path).bands[0].values[0, 0] == 1.0
    assert cache.misses == 2


def test_least_recently_used_is_evicted(tmp_path, make_raster):
    paths = []
    for i in range(3):
        paths.append(tmp_path / f"s{i}.lkr")
        write_portable(make_raster(seed=i), paths[-1])
    cache = RasterCache(maxsize=2)
    for path in paths:
        cache.read(path)
    cache.read(paths[0])
    assert cache.misses == 4
    cache.clear()
    cache.read(paths[2])
    assert cache.misses == 5


def test_counters_stay_consistent_across_threads(tmp_path, make_raster):
    path = tmp_path / "scene.lkr"
    write_portable(make_raster(), path)
    cache = RasterCache(maxsize=2)
    cache.read(path)
    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(lambda _: cache.read(path), range(200)))
    assert cache.stats() == (200, 1)
