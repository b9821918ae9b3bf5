"""Instance-type catalogs: loading, validation, and the K / E matrices."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

DEFAULT_RESOURCES = ("cpu_cores", "memory_gb", "network_units", "storage_gb")
DEFAULT_UNITS = ("cores", "GB", "units", "GB")
CSV_HEADER = ["provider", "sku", *DEFAULT_RESOURCES, "hourly_usd"]


class CatalogError(ValueError):
    """Raised for malformed or invalid catalog data."""


@dataclass(frozen=True)
class ResourceSchema:
    names: tuple[str, ...]
    units: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise CatalogError("schema needs at least one resource")
        if len(self.units) != len(self.names):
            raise CatalogError("schema names and units differ in length")
        if any(not name for name in self.names):
            raise CatalogError("resource names must be nonempty")
        if len(set(self.names)) != len(self.names):
            raise CatalogError(f"duplicate resource names in {self.names}")

    @property
    def m(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise CatalogError(f"unknown resource {name!r}") from None

    @classmethod
    def default(cls) -> "ResourceSchema":
        return cls(DEFAULT_RESOURCES, DEFAULT_UNITS)


@dataclass(frozen=True)
class InstanceType:
    provider_id: str
    sku: str
    capacities: tuple[float, ...]
    hourly_cost: float

    def __post_init__(self):
        if not np.isfinite(self.hourly_cost) or self.hourly_cost < 0:
            raise CatalogError(f"{self.provider_id}/{self.sku}: hourly cost must be >= 0, got {self.hourly_cost}")
        caps = np.asarray(self.capacities, dtype=float)
        if not np.all(np.isfinite(caps)) or np.any(caps < 0):
            raise CatalogError(f"{self.provider_id}/{self.sku}: capacities must be >= 0, got {self.capacities}")
        if not np.any(caps > 0):
            raise CatalogError(f"{self.provider_id}/{self.sku}: at least one capacity must be positive")


@dataclass(frozen=True)
class InstanceCatalog:
    """An ordered, immutable list of instance types.

    Provider order is first-appearance order unless given explicitly. A
    provider may be listed without any instances (this happens for filtered
    sub-catalogs, which keep the parent's provider list).
    """

    schema: ResourceSchema
    instances: tuple[InstanceType, ...]
    providers: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.instances) < 1:
            raise CatalogError("catalog has no instances")
        providers = self.providers
        if not providers:
            providers = tuple(dict.fromkeys(inst.provider_id for inst in self.instances))
            object.__setattr__(self, "providers", providers)
        if len(set(providers)) != len(providers):
            raise CatalogError("duplicate provider identifiers")
        seen = set()
        for inst in self.instances:
            if len(inst.capacities) != self.schema.m:
                raise CatalogError(
                    f"{inst.provider_id}/{inst.sku}: expected {self.schema.m} capacities, got {len(inst.capacities)}"
                )
            if inst.provider_id not in providers:
                raise CatalogError(f"{inst.sku}: provider {inst.provider_id!r} not in provider list")
            key = (inst.provider_id, inst.sku)
            if key in seen:
                raise CatalogError(f"duplicate instance {inst.provider_id}/{inst.sku}")
            seen.add(key)

    @property
    def n(self) -> int:
        return len(self.instances)

    @property
    def p(self) -> int:
        return len(self.providers)

    @property
    def m(self) -> int:
        return self.schema.m

    @property
    def costs(self) -> np.ndarray:
        return np.array([inst.hourly_cost for inst in self.instances], dtype=float)

    def find(self, provider: str, sku: str) -> int:
        for i, inst in enumerate(self.instances):
            if inst.provider_id == provider and inst.sku == sku:
                return i
        raise CatalogError(f"no instance {provider}/{sku} in catalog")

    def subset(self, indices: Sequence[int]) -> "InstanceCatalog":
        """Catalog restricted to ``indices`` (in that order), same provider list."""
        return InstanceCatalog(self.schema, tuple(self.instances[i] for i in indices), self.providers)

    def capacity(self, i: int, resource: str) -> float:
        return self.instances[i].capacities[self.schema.index(resource)]


def composition_matrix(catalog: InstanceCatalog) -> np.ndarray:
    """K[r, i] = amount of resource r in one unit of instance i."""
    return np.array([inst.capacities for inst in catalog.instances], dtype=float).T.copy()


def selector_matrix(catalog: InstanceCatalog) -> np.ndarray:
    """E[j, i] = 1 iff instance i belongs to provider j."""
    E = np.zeros((catalog.p, catalog.n))
    index = {pid: j for j, pid in enumerate(catalog.providers)}
    for i, inst in enumerate(catalog.instances):
        E[index[inst.provider_id], i] = 1.0
    return E


# --- file formats -----------------------------------------------------------

def _number(text: str, what: str, where: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise CatalogError(f"{where}: cannot parse {what} {text!r}") from None
    return value


def _load_csv(path: str) -> InstanceCatalog:
    schema = ResourceSchema.default()
    instances = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != CSV_HEADER:
            raise CatalogError(f"{path}: header must be {','.join(CSV_HEADER)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            if None in row or any(v is None for v in row.values()):
                raise CatalogError(f"{where}: wrong number of fields")
            caps = tuple(_number(row[name], name, where) for name in DEFAULT_RESOURCES)
            price = _number(row["hourly_usd"], "hourly_usd", where)
            try:
                instances.append(InstanceType(row["provider"].strip(), row["sku"].strip(), caps, price))
            except CatalogError as exc:
                raise CatalogError(f"{where}: {exc}") from None
    return InstanceCatalog(schema, tuple(instances))


def catalog_from_dict(data: dict, where: str = "<catalog>") -> InstanceCatalog:
    try:
        raw_schema = data["schema"]
        names = tuple(str(r["name"]) for r in raw_schema)
        units = tuple(str(r.get("unit", "")) for r in raw_schema)
        records = data["instances"]
    except (KeyError, TypeError) as exc:
        raise CatalogError(f"{where}: missing or malformed field {exc}") from None
    schema = ResourceSchema(names, units)
    instances = []
    for k, rec in enumerate(records):
        here = f"{where}: instance #{k}"
        try:
            caps = rec["capacities"]
            if isinstance(caps, dict):
                caps = [caps[name] for name in names]
            inst = InstanceType(
                str(rec["provider_id"]),
                str(rec["sku"]),
                tuple(_number(v, "capacity", here) for v in caps),
                _number(rec["hourly_cost"], "hourly_cost", here),
            )
        except (KeyError, TypeError) as exc:
            raise CatalogError(f"{here}: missing or malformed field {exc}") from None
        except CatalogError as exc:
            raise CatalogError(f"{here}: {exc}") from None
        instances.append(inst)
    providers = tuple(data.get("providers") or ())
    return InstanceCatalog(schema, tuple(instances), providers)


def catalog_to_dict(catalog: InstanceCatalog) -> dict:
    return {
        "schema": [{"name": n, "unit": u} for n, u in zip(catalog.schema.names, catalog.schema.units)],
        "providers": list(catalog.providers),
        "instances": [
            {
                "provider_id": inst.provider_id,
                "sku": inst.sku,
                "capacities": list(inst.capacities),
                "hourly_cost": inst.hourly_cost,
            }
            for inst in catalog.instances
        ],
    }


def _infer_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        return "csv"
    if ext == ".json":
        return "json"
    raise CatalogError(f"cannot infer catalog format from {path!r}; pass format='csv' or 'json'")


def load_catalog(path: str, format: str | None = None) -> InstanceCatalog:
    """Load and validate a catalog from a CSV or JSON file.

    Instance order is file order; provider order is first appearance.
    """
    fmt = format or _infer_format(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "json":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return catalog_from_dict(data, path)
    raise CatalogError(f"unknown catalog format {fmt!r}")


def save_catalog(catalog: InstanceCatalog, path: str, format: str | None = None) -> None:
    fmt = format or _infer_format(path)
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(catalog_to_dict(catalog), fh, indent=2)
            fh.write("\n")
    elif fmt == "csv":
        if catalog.schema.names != DEFAULT_RESOURCES:
            raise CatalogError("CSV catalogs only support the default four-resource schema; use JSON")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for inst in catalog.instances:
                writer.writerow([inst.provider_id, inst.sku, *(repr(float(v)) for v in inst.capacities),
                                 repr(float(inst.hourly_cost))])
    else:
        raise CatalogError(f"unknown catalog format {fmt!r}")


# --- synthetic catalogs -----------------------------------------------------

@dataclass(frozen=True)
class SynthRanges:
    """Knobs for :func:`synth_catalog`.

    Instances are drawn from families (GB of memory per core) and power-of-two
    core counts. Network is tied to cores; storage is per-core with jitter.
    Price is ``base + sum(weight * capacity)`` scaled by a per-provider factor,
    plus multiplicative noise, clamped positive.
    """

    cores: tuple[float, ...] = (1, 2, 4, 8, 16, 32)
    memory_per_core: tuple[float, ...] = (2.0, 4.0, 8.0)
    network_per_core: float = 0.5
    storage_per_core: tuple[float, float] = (12.0, 20.0)
    base_price: float = 0.004
    price_weights: tuple[float, ...] = (0.022, 0.0035, 0.002, 0.00008)
    provider_factor: tuple[float, float] = (0.85, 1.15)
    price_noise: float = 0.06


def synth_catalog(seed: int, n: int, p: int, schema: ResourceSchema | None = None,
                  ranges: SynthRanges | None = None) -> InstanceCatalog:
    """Deterministic synthetic catalog of ``n`` instances over ``p`` providers.

    Providers take instances round-robin, so every provider is nonempty.
    Within a provider the (cores, family) grid is walked in a seeded order,
    so a large enough ``n`` covers every combination for every provider.
    """
    if not (n >= p >= 1):
        raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
    schema = schema or ResourceSchema.default()
    if schema.names != DEFAULT_RESOURCES:
        raise CatalogError("synth_catalog generates the default four-resource schema only")
    ranges = ranges or SynthRanges()
    rng = np.random.default_rng(seed)
    providers = [f"provider{j}" if p > 2 else ("azure", "linode")[j] for j in range(p)]
    factors = rng.uniform(*ranges.provider_factor, size=p)
    combos = [(c, f) for c in ranges.cores for f in ranges.memory_per_core]
    orders = [rng.permutation(len(combos)) for _ in range(p)]
    weights = np.asarray(ranges.price_weights)
    used = [0] * p
    instances = []
    for k in range(n):
        j = k % p
        slot = used[j]
        used[j] += 1
        cores, mem_ratio = combos[orders[j][slot % len(combos)]]
        generation = slot // len(combos)
        storage = cores * rng.uniform(*ranges.storage_per_core)
        caps = np.array([cores, cores * mem_ratio, cores * ranges.network_per_core, round(storage)])
        price = (ranges.base_price + weights @ caps) * factors[j]
        price *= 1.0 + ranges.price_noise * rng.standard_normal()
        price = round(max(price, 0.001), 4)
        family = {2.0: "c", 4.0: "g", 8.0: "m"}.get(mem_ratio, "x")
        sku = f"{family}{int(cores)}" + (f"v{generation + 1}" if generation else "")
        instances.append(InstanceType(providers[j], sku, tuple(float(v) for v in caps), float(price)))
    return InstanceCatalog(schema, tuple(instances), tuple(providers))


def bundled_catalog_path() -> str:
    return str(resources.files("cloudalloc") / "data" / "catalog.csv")


def bundled_catalog() -> InstanceCatalog:
    """The synthetic two-provider catalog shipped with the package."""
    return load_catalog(bundled_catalog_path(), "csv")
