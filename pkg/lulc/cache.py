"""In-memory LRU cache of decoded rasters."""
import logging
import threading
from pathlib import Path
from typing import Optional, Tuple, Union

from cachetools import LRUCache

from lulc.raster_core import Raster, read_raster

logger = logging.getLogger(__name__)

CacheKey = Tuple[str, int, int]


class RasterCache:
    """Thread-safe LRU of rasters keyed by (resolved path, mtime_ns, size)."""

    def __init__(self, maxsize: int = 16):
        """Initialize the cache with a maximum number of rasters."""
        self._cache: LRUCache[CacheKey, Raster] = LRUCache(maxsize=maxsize)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key_of(path: Union[str, Path]) -> CacheKey:
        resolved = Path(path).resolve()
        stat = resolved.stat()
        return (str(resolved), stat.st_mtime_ns, stat.st_size)

    def get(self, key: CacheKey) -> Optional[Raster]:
        with self._lock:
            raster = self._cache.get(key)
            if raster is None:
                self.misses += 1
            else:
                self.hits += 1
            return raster

    def set(self, key: CacheKey, raster: Raster) -> None:
        with self._lock:
            self._cache[key] = raster

    def clear(self) -> None:
        """Clear all entries from the cache."""
        with self._lock:
            self._cache.clear()

    def stats(self) -> Tuple[int, int]:
        """(hits, misses) read under the lock."""
        with self._lock:
            return self.hits, self.misses

    def read(self, path: Union[str, Path]) -> Raster:
        """Raster at path, decoded at most once while the file is unchanged."""
        try:
            key = self.key_of(path)
        except OSError:
            # let the reader raise its IoError
            return read_raster(path)
        cached = self.get(key)
        if cached is not None:
            logger.debug(f"Raster cache hit for {path}")
            return cached
        raster = read_raster(path)
        self.set(key, raster)
        return raster
