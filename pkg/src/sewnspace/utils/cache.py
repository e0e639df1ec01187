"""
Caching system for expensive construction results (samples, pulled spaces, tunnels).
"""

import hashlib
import json
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional


def parameter_hash(params: Dict[str, Any]) -> str:
    """
    Hash a parameter record into a stable hex digest.

    Args:
        params: JSON-serialisable parameters

    Returns:
        md5 hex digest of the sorted-key JSON dump
    """
    params_str = json.dumps(params, sort_keys=True, default=str)
    return hashlib.md5(params_str.encode()).hexdigest()


@dataclass
class CacheEntry:
    """Represents a cache entry with metadata."""
    data: Any
    created_at: float
    cache_key: str
    hits: int = 0

    def is_expired(self, max_age_seconds: float, now: Optional[float] = None) -> bool:
        """Check if the entry outlived the cache's age limit."""
        now = time.time() if now is None else now
        return now - self.created_at > max_age_seconds


class ResultCache:
    """
    In-memory cache for construction results keyed by operation and parameters.
    """

    def __init__(self, max_entries: int = 16, max_age_seconds: int = 3600):
        """
        Initialize the result cache.

        Args:
            max_entries: Maximum number of entries to keep in memory
            max_age_seconds: Maximum age of cache entries in seconds
        """
        self.max_entries = max_entries
        self.max_age_seconds = max_age_seconds
        self._cache: Dict[str, CacheEntry] = {}

    def _generate_cache_key(self, operation: str, **kwargs) -> str:
        return parameter_hash({'operation': operation, **kwargs})

    def get(self, operation: str, **kwargs) -> Optional[Any]:
        """
        Get cached result if available and not expired.

        Args:
            operation: Name of the construction (e.g. 'sphere', 'pulled')
            **kwargs: Parameters that determine the result

        Returns:
            Cached result or None
        """
        cache_key = self._generate_cache_key(operation, **kwargs)
        entry = self._cache.get(cache_key)
        if entry is None:
            return None

        if entry.is_expired(self.max_age_seconds):
            self._remove_entry(cache_key)
            return None

        entry.hits += 1
        return entry.data

    def set(self, operation: str, data: Any, **kwargs) -> None:
        """
        Store result in cache.

        Args:
            operation: Name of the construction
            data: Result to cache
            **kwargs: Parameters that determine the result
        """
        cache_key = self._generate_cache_key(operation, **kwargs)
        self._cache[cache_key] = CacheEntry(data=data, created_at=time.time(), cache_key=cache_key)
        self._cleanup_if_needed()

    def get_or_build(self, operation: str, builder: Callable[[], Any], **kwargs) -> Any:
        """Return the cached result, building and storing it on a miss."""
        data = self.get(operation, **kwargs)
        if data is None:
            data = builder()
            self.set(operation, data, **kwargs)
        return data

    def _remove_entry(self, cache_key: str) -> None:
        self._cache.pop(cache_key, None)

    def _cleanup_if_needed(self) -> None:
        """Drop expired entries, then the oldest ones beyond max_entries."""
        now = time.time()
        for key in [k for k, e in self._cache.items() if e.is_expired(self.max_age_seconds, now)]:
            self._remove_entry(key)

        if len(self._cache) > self.max_entries:
            sorted_entries = sorted(self._cache.items(), key=lambda x: x[1].created_at)
            for key, _ in sorted_entries[:len(self._cache) - self.max_entries]:
                self._remove_entry(key)

    def clear(self) -> None:
        """Clear all cache entries."""
        self._cache.clear()

    def get_stats(self) -> Dict[str, Any]:
        """
        Get cache statistics.

        Returns:
            Dictionary with cache stats
        """
        now = time.time()
        expired = sum(1 for e in self._cache.values() if e.is_expired(self.max_age_seconds, now))
        return {
            "total_entries": len(self._cache),
            "valid_entries": len(self._cache) - expired,
            "expired_entries": expired,
            "total_hits": sum(e.hits for e in self._cache.values()),
            "max_entries": self.max_entries,
            "max_age_seconds": self.max_age_seconds,
        }
