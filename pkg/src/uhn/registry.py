"""Frozen mapping of categorical descriptor values to integer IDs."""

import csv
import hashlib
import io
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .config import REGISTRY_COLUMNS, REGISTRY_FILE


@dataclass
class Registry:
    """Categorical registry loaded from a versioned CSV file."""

    entries: dict[str, dict[str, int]]
    digest: str
    source: str = ""
    _names: dict[str, dict[int, str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for namespace, mapping in self.entries.items():
            ids = sorted(mapping.values())
            if ids != list(range(len(ids))):
                raise ValueError(f"Registry namespace {namespace!r} has non-consecutive IDs: {ids}")
            self._names[namespace] = {v: k for k, v in mapping.items()}

    @classmethod
    def from_text(cls, text: str, source: str = "") -> "Registry":
        lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
        reader = csv.DictReader(io.StringIO("\n".join(lines)))
        if reader.fieldnames != REGISTRY_COLUMNS:
            raise ValueError(f"Registry header must be {REGISTRY_COLUMNS}, got {reader.fieldnames}")
        entries: dict[str, dict[str, int]] = {}
        for row in reader:
            namespace = entries.setdefault(row["namespace"], {})
            if row["name"] in namespace:
                raise ValueError(f"Duplicate registry entry {row['namespace']}.{row['name']}")
            namespace[row["name"]] = int(row["id"])
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return cls(entries=entries, digest=digest, source=source)

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "Registry":
        """Load a registry file; the packaged one when no path is given."""
        if path is None:
            return default_registry()
        return cls.from_text(Path(path).read_text(encoding="utf-8"), source=str(path))

    def id(self, namespace: str, name: str) -> int:
        if namespace not in self.entries:
            raise ValueError(f"Unknown registry namespace: {namespace}")
        try:
            return self.entries[namespace][name]
        except KeyError:
            raise ValueError(
                f"Unknown {namespace} value: {name!r}. Known: {sorted(self.entries[namespace])}"
            ) from None

    def name(self, namespace: str, value: int) -> str:
        return self._names[namespace][int(value)]

    def names(self, namespace: str) -> list[str]:
        mapping = self.entries[namespace]
        return sorted(mapping, key=mapping.get)


@lru_cache(maxsize=1)
def default_registry() -> Registry:
    text = resources.files("uhn").joinpath(REGISTRY_FILE).read_text(encoding="utf-8")
    return Registry.from_text(text, source=REGISTRY_FILE)
