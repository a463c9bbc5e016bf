"""Vehicle catalog ingestion, feature normalization, and margins.

Continuous features (price, mileage, market value) are min-max
normalized after a log transform. Categorical features are one-hot
encoded with each block scaled by 1/(number of levels) so that groups
with many levels do not dominate Euclidean distances. Accident and
owner counts are bucketed into small categorical groups because a log
transform is undefined at zero.

Margins are a fixed fraction of market value. Vehicles outside a
percentile band of market value are flagged as excluded from margin
statistics but remain clusterable; the band is computed on market
value, and since the margin is a fixed multiple, flagging on margin
would select the identical set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .rng import substream

__all__ = [
    "BODY_STYLES",
    "TRANSMISSIONS",
    "DRIVETRAINS",
    "VehicleRecord",
    "VehicleCatalog",
    "NormalizationSpec",
    "NormalizedVehicle",
    "CatalogError",
    "load_catalog",
    "save_catalog",
    "normalize",
    "feature_matrix",
    "compute_margins",
    "MarginReport",
    "SegmentProfile",
    "DEFAULT_SEGMENT_PROFILES",
    "separable_profiles",
    "synthetic_catalog",
]

BODY_STYLES = (
    "convertible",
    "coupe",
    "hatchback",
    "suv",
    "sedan",
    "truck",
    "van",
    "wagon",
)
TRANSMISSIONS = ("automatic", "cvt", "manual")
DRIVETRAINS = ("rwd", "awd", "4wd", "fwd", "na")

# Owner counts are bucketed as {0, 1, 2, 3+}; accidents as {0, 1+}.
_OWNER_BUCKETS = 4
_ACCIDENT_BUCKETS = 2

DEFAULT_COLUMNS = {
    "vehicle_id": "vehicle_id",
    "body_style": "body_style",
    "transmission": "transmission",
    "drivetrain": "drivetrain",
    "num_accidents": "num_accidents",
    "num_owners": "num_owners",
    "price": "price",
    "mileage": "mileage",
    "market_value": "market_value",
}


class CatalogError(ValueError):
    """Raised when a catalog file or record violates the schema."""


@dataclass(frozen=True)
class VehicleRecord:
    vehicle_id: str
    body_style: str
    transmission: str
    drivetrain: str
    num_accidents: int
    num_owners: int
    price: float
    mileage: float
    market_value: float

    def validate(self) -> None:
        if self.body_style not in BODY_STYLES:
            raise CatalogError(f"unknown body_style {self.body_style!r}")
        if self.transmission not in TRANSMISSIONS:
            raise CatalogError(f"unknown transmission {self.transmission!r}")
        if self.drivetrain not in DRIVETRAINS:
            raise CatalogError(f"unknown drivetrain {self.drivetrain!r}")
        if self.num_accidents < 0 or self.num_owners < 0:
            raise CatalogError("counts must be nonnegative")
        for name in ("price", "mileage", "market_value"):
            if not getattr(self, name) > 0:
                raise CatalogError(f"{name} must be positive")


@dataclass
class VehicleCatalog:
    vehicles: list[VehicleRecord]

    def __len__(self) -> int:
        return len(self.vehicles)

    def __iter__(self):
        return iter(self.vehicles)

    @property
    def vehicle_ids(self) -> list[str]:
        return [v.vehicle_id for v in self.vehicles]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(v, name) for v in self.vehicles])


def load_catalog(path, schema: dict | None = None) -> VehicleCatalog:
    """Read a catalog CSV, validating every row.

    ``schema`` maps canonical field names to CSV column names; missing
    entries fall back to the canonical names. Rows that fail validation
    abort the load with the offending row index.
    """
    columns = dict(DEFAULT_COLUMNS)
    if schema:
        columns.update(schema)
    vehicles: list[VehicleRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns.values() if c not in header]
        if missing:
            raise CatalogError(f"missing columns: {missing}")
        for i, row in enumerate(reader):
            try:
                record = VehicleRecord(
                    vehicle_id=str(row[columns["vehicle_id"]]),
                    body_style=row[columns["body_style"]].strip().lower(),
                    transmission=row[columns["transmission"]].strip().lower(),
                    drivetrain=row[columns["drivetrain"]].strip().lower(),
                    num_accidents=int(row[columns["num_accidents"]]),
                    num_owners=int(row[columns["num_owners"]]),
                    price=float(row[columns["price"]]),
                    mileage=float(row[columns["mileage"]]),
                    market_value=float(row[columns["market_value"]]),
                )
                record.validate()
            except (CatalogError, KeyError, ValueError) as exc:
                raise CatalogError(f"row {i}: {exc}") from exc
            vehicles.append(record)
    return VehicleCatalog(vehicles)


def save_catalog(catalog: VehicleCatalog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(DEFAULT_COLUMNS))
        for v in catalog:
            writer.writerow(
                [
                    v.vehicle_id,
                    v.body_style,
                    v.transmission,
                    v.drivetrain,
                    v.num_accidents,
                    v.num_owners,
                    f"{v.price:.2f}",
                    f"{v.mileage:.1f}",
                    f"{v.market_value:.2f}",
                ]
            )


@dataclass
class NormalizationSpec:
    """Feature construction settings for clustering.

    ``categorical_weight`` scales each one-hot block; the default
    ``1/levels`` gives every categorical the same total budget.
    """

    margin_rate: float = 0.3
    continuous: tuple[str, ...] = ("price", "mileage", "margin")
    categorical_weight: str = "inverse_levels"  # or "unit"

    def block_weight(self, levels: int) -> float:
        if self.categorical_weight == "inverse_levels":
            return 1.0 / levels
        if self.categorical_weight == "unit":
            return 1.0
        raise ValueError(f"unknown categorical_weight {self.categorical_weight!r}")


@dataclass
class NormalizedVehicle:
    vehicle_id: str
    feature_vector: np.ndarray
    margin: float


def _minmax_log(values: np.ndarray) -> np.ndarray:
    if np.any(values <= 0):
        raise CatalogError("log normalization requires strictly positive values")
    logs = np.log(values)
    lo, hi = logs.min(), logs.max()
    if hi == lo:
        # degenerate range: keep the feature inert rather than NaN
        return np.full_like(logs, 0.5)
    return (logs - lo) / (hi - lo)


def _one_hot(levels: tuple[str, ...], values, weight: float) -> np.ndarray:
    index = {level: j for j, level in enumerate(levels)}
    out = np.zeros((len(values), len(levels)))
    for i, v in enumerate(values):
        out[i, index[v]] = weight
    return out


def _bucket_owners(n: int) -> int:
    return min(n, 3)


def _bucket_accidents(n: int) -> int:
    return min(n, 1)


def feature_names(spec: NormalizationSpec) -> list[str]:
    names = [f"body:{b}" for b in BODY_STYLES]
    names += [f"trans:{t}" for t in TRANSMISSIONS]
    names += [f"drive:{d}" for d in DRIVETRAINS]
    names += ["accidents:0", "accidents:1+"]
    names += ["owners:0", "owners:1", "owners:2", "owners:3+"]
    names += [f"log_{c}" for c in spec.continuous]
    return names


def normalize(
    catalog: VehicleCatalog, spec: NormalizationSpec | None = None
) -> list[NormalizedVehicle]:
    """Build weighted clustering features and per-vehicle margins."""
    if len(catalog) == 0:
        raise CatalogError("catalog is empty")
    spec = spec or NormalizationSpec()

    blocks: list[np.ndarray] = []
    blocks.append(
        _one_hot(BODY_STYLES, catalog.column("body_style"), spec.block_weight(len(BODY_STYLES)))
    )
    blocks.append(
        _one_hot(
            TRANSMISSIONS, catalog.column("transmission"), spec.block_weight(len(TRANSMISSIONS))
        )
    )
    blocks.append(
        _one_hot(DRIVETRAINS, catalog.column("drivetrain"), spec.block_weight(len(DRIVETRAINS)))
    )
    acc = [str(_bucket_accidents(v.num_accidents)) for v in catalog]
    blocks.append(_one_hot(("0", "1"), acc, spec.block_weight(_ACCIDENT_BUCKETS)))
    own = [str(_bucket_owners(v.num_owners)) for v in catalog]
    blocks.append(_one_hot(("0", "1", "2", "3"), own, spec.block_weight(_OWNER_BUCKETS)))

    margins = spec.margin_rate * catalog.column("market_value").astype(float)
    for name in spec.continuous:
        if name == "margin":
            values = margins
        else:
            values = catalog.column(name).astype(float)
        blocks.append(_minmax_log(values)[:, None])

    features = np.hstack(blocks)
    return [
        NormalizedVehicle(v.vehicle_id, features[i], float(margins[i]))
        for i, v in enumerate(catalog)
    ]


def feature_matrix(normalized: list[NormalizedVehicle]) -> np.ndarray:
    return np.vstack([nv.feature_vector for nv in normalized])


@dataclass
class MarginReport:
    vehicle_ids: list[str]
    margins: np.ndarray
    excluded: np.ndarray  # bool mask, outside the percentile band

    def cluster_margins(self, assignments: dict[str, int], k: int) -> np.ndarray:
        """Mean margin per cluster over non-excluded members.

        Clusters with only excluded members fall back to the mean over
        all members.
        """
        out = np.zeros(k)
        for c in range(k):
            member = np.array([assignments[v] == c for v in self.vehicle_ids])
            kept = member & ~self.excluded
            if not kept.any():
                kept = member
            if not kept.any():
                raise CatalogError(f"cluster {c} has no members")
            out[c] = self.margins[kept].mean()
        return out


def compute_margins(
    catalog: VehicleCatalog,
    rate: float = 0.3,
    trim: tuple[float, float] = (5.0, 95.0),
) -> MarginReport:
    """Per-vehicle margins with percentile-band outlier flags."""
    if not 0 < rate < 1:
        raise ValueError("rate must be in (0, 1)")
    low, high = trim
    if not 0 <= low < high <= 100:
        raise ValueError("trim percentiles must satisfy 0 <= low < high <= 100")
    market = catalog.column("market_value").astype(float)
    margins = rate * market
    p_low, p_high = np.percentile(market, [low, high])
    excluded = (market < p_low) | (market > p_high)
    return MarginReport(catalog.vehicle_ids, margins, excluded)


@dataclass
class SegmentProfile:
    """Generating distribution for one synthetic vehicle segment.

    The continuous targets are means on the normalized log scale in
    [0, 1]; the generator maps them back through fixed price, mileage
    and valuation ranges.
    """

    name: str
    n: int
    body_style: dict[str, float]
    transmission: dict[str, float]
    drivetrain: dict[str, float]
    accident_rate: float
    owners: tuple[float, float, float, float]
    log_price: float
    log_mileage: float
    log_margin: float


DEFAULT_SEGMENT_PROFILES: tuple[SegmentProfile, ...] = (
    SegmentProfile(
        "rwd", 725,
        {"convertible": 0.15, "coupe": 0.18, "hatchback": 0.01, "suv": 0.06,
         "sedan": 0.52, "truck": 0.07, "wagon": 0.01},
        {"automatic": 1.0}, {"rwd": 1.0},
        0.0, (0.18, 0.29, 0.38, 0.15), 0.48, 0.86, 0.42,
    ),
    SegmentProfile(
        "fwd", 1270,
        {"convertible": 0.03, "coupe": 0.04, "hatchback": 0.20, "suv": 0.17,
         "sedan": 0.50, "van": 0.04, "wagon": 0.02},
        {"automatic": 1.0}, {"fwd": 1.0},
        0.0, (0.17, 0.48, 0.27, 0.08), 0.38, 0.85, 0.34,
    ),
    SegmentProfile(
        "manual", 445,
        {"convertible": 0.10, "coupe": 0.28, "hatchback": 0.26, "suv": 0.07,
         "sedan": 0.25, "truck": 0.02, "wagon": 0.02},
        {"manual": 1.0},
        {"rwd": 0.31, "awd": 0.11, "4wd": 0.04, "fwd": 0.36, "na": 0.18},
        0.0, (0.19, 0.42, 0.27, 0.12), 0.44, 0.83, 0.39,
    ),
    SegmentProfile(
        "unknown-drive", 380,
        {"convertible": 0.08, "coupe": 0.12, "hatchback": 0.14, "suv": 0.13,
         "sedan": 0.50, "van": 0.01, "wagon": 0.02},
        {"automatic": 1.0}, {"na": 1.0},
        0.0, (0.18, 0.37, 0.34, 0.11), 0.40, 0.85, 0.38,
    ),
    SegmentProfile(
        "cvt", 427,
        {"convertible": 0.01, "coupe": 0.04, "hatchback": 0.34, "suv": 0.16,
         "sedan": 0.41, "wagon": 0.04},
        {"cvt": 1.0},
        {"awd": 0.19, "fwd": 0.64, "na": 0.16, "4wd": 0.01},
        0.0, (0.14, 0.60, 0.22, 0.04), 0.41, 0.83, 0.36,
    ),
    SegmentProfile(
        "awd", 445,
        {"convertible": 0.02, "coupe": 0.07, "hatchback": 0.03, "suv": 0.59,
         "sedan": 0.24, "van": 0.01, "wagon": 0.04},
        {"automatic": 1.0}, {"awd": 1.0},
        0.0, (0.16, 0.38, 0.34, 0.12), 0.51, 0.86, 0.45,
    ),
    SegmentProfile(
        "4wd", 161,
        {"convertible": 0.01, "hatchback": 0.01, "suv": 0.78, "truck": 0.19,
         "wagon": 0.01},
        {"automatic": 1.0}, {"4wd": 1.0},
        0.0, (0.21, 0.47, 0.26, 0.06), 0.54, 0.85, 0.47,
    ),
    SegmentProfile(
        "accident", 287,
        {"convertible": 0.06, "coupe": 0.10, "hatchback": 0.15, "suv": 0.23,
         "sedan": 0.41, "truck": 0.01, "van": 0.02, "wagon": 0.02},
        {"automatic": 0.79, "cvt": 0.11, "manual": 0.10},
        {"rwd": 0.18, "awd": 0.17, "4wd": 0.08, "fwd": 0.40, "na": 0.17},
        1.0, (0.0, 0.45, 0.42, 0.13), 0.40, 0.88, 0.36,
    ),
)

def separable_profiles(k: int, per_segment: int = 120) -> tuple[SegmentProfile, ...]:
    """Cleanly separated segments for planted-recovery experiments.

    Each segment pins a distinct transmission/drivetrain combination and
    a dominant body style and owner bucket, so the planted K is the
    silhouette argmax. The default profiles instead reproduce realistic
    marginal mixes and are not guaranteed to be silhouette separable.
    """
    if k > len(TRANSMISSIONS) * len(DRIVETRAINS):
        raise ValueError("too many segments to keep combinations distinct")
    profiles = []
    for i in range(k):
        trans = TRANSMISSIONS[i % len(TRANSMISSIONS)]
        drive = DRIVETRAINS[(i // len(TRANSMISSIONS) + i) % len(DRIVETRAINS)]
        body = {s: 0.3 / (len(BODY_STYLES) - 1) for s in BODY_STYLES}
        body[BODY_STYLES[i % len(BODY_STYLES)]] = 0.7
        owners = [0.1, 0.1, 0.1, 0.1]
        owners[i % 4] = 0.7
        target = 0.3 + 0.4 * i / max(k - 1, 1)
        profiles.append(
            SegmentProfile(
                name=f"segment-{i}",
                n=per_segment,
                body_style=body,
                transmission={trans: 1.0},
                drivetrain={drive: 1.0},
                accident_rate=1.0 if i == k - 1 else 0.0,
                owners=tuple(owners),
                log_price=target,
                log_mileage=1.0 - target,
                log_margin=target,
            )
        )
    return tuple(profiles)


# Log-scale ranges the normalized targets are mapped through.
_PRICE_RANGE = (math.log(4_000.0), math.log(80_000.0))
_MILEAGE_RANGE = (math.log(1_000.0), math.log(220_000.0))
_VALUE_RANGE = (math.log(4_000.0), math.log(90_000.0))


def _draw_categorical(rng: np.random.Generator, dist: dict[str, float], n: int) -> list[str]:
    levels = list(dist)
    probs = np.array([dist[level] for level in levels], dtype=float)
    probs = probs / probs.sum()
    idx = rng.choice(len(levels), size=n, p=probs)
    return [levels[i] for i in idx]


def _draw_normalized(
    rng: np.random.Generator, mean: float, n: int, sd: float = 0.05, stray: float = 0.01
) -> np.ndarray:
    """Values on [0, 1] centered at ``mean``, with a thin uniform tail.

    The uniform component spreads a small share of vehicles across the
    whole range so the sample min and max pin down the normalization
    endpoints and segment means survive re-normalization.
    """
    u = np.clip(rng.normal(mean, sd, size=n), 0.0, 1.0)
    strays = rng.random(n) < stray
    u[strays] = rng.random(strays.sum())
    return u


def synthetic_catalog(
    seed: int,
    profiles: tuple[SegmentProfile, ...] = DEFAULT_SEGMENT_PROFILES,
    scale: float = 1.0,
) -> tuple[VehicleCatalog, dict[str, int]]:
    """Generate a catalog from segment profiles.

    Returns the catalog and the planted segment assignment (vehicle id
    to profile index). ``scale`` multiplies every segment's size.
    """
    rng = substream(seed, "catalog")
    vehicles: list[VehicleRecord] = []
    planted: dict[str, int] = {}
    counter = 0
    for seg_index, prof in enumerate(profiles):
        n = max(2, int(round(prof.n * scale)))
        bodies = _draw_categorical(rng, prof.body_style, n)
        transmissions = _draw_categorical(rng, prof.transmission, n)
        drives = _draw_categorical(rng, prof.drivetrain, n)
        accidents = (rng.random(n) < prof.accident_rate).astype(int)
        accidents *= 1 + (rng.random(n) < 0.2).astype(int)  # a few 2-accident cars
        owner_bucket = rng.choice(4, size=n, p=np.array(prof.owners) / sum(prof.owners))
        owners = owner_bucket + (owner_bucket == 3) * rng.integers(0, 3, size=n)
        u_price = _draw_normalized(rng, prof.log_price, n)
        u_mileage = _draw_normalized(rng, prof.log_mileage, n)
        u_value = _draw_normalized(rng, prof.log_margin, n)
        price = np.exp(_PRICE_RANGE[0] + u_price * (_PRICE_RANGE[1] - _PRICE_RANGE[0]))
        mileage = np.exp(
            _MILEAGE_RANGE[0] + u_mileage * (_MILEAGE_RANGE[1] - _MILEAGE_RANGE[0])
        )
        value = np.exp(_VALUE_RANGE[0] + u_value * (_VALUE_RANGE[1] - _VALUE_RANGE[0]))
        for i in range(n):
            vid = f"v{counter:06d}"
            counter += 1
            vehicles.append(
                VehicleRecord(
                    vehicle_id=vid,
                    body_style=bodies[i],
                    transmission=transmissions[i],
                    drivetrain=drives[i],
                    num_accidents=int(accidents[i]),
                    num_owners=int(owners[i]),
                    price=float(round(price[i], 2)),
                    mileage=float(round(mileage[i], 1)),
                    market_value=float(round(value[i], 2)),
                )
            )
            planted[vid] = seg_index
    return VehicleCatalog(vehicles), planted
