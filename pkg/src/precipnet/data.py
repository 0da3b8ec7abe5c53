"""
Coincidence records, stratified databases and their on-disk formats.

A database is stored column-wise (one numpy array per field) because every
consumer works on whole columns; :class:`CoincidenceRecord` is the row view.
"""
import csv
import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, ValidationError

N_ANCILLARY = 5
ANCILLARY_FIELDS = ("lwp", "iwp", "wvp", "cape", "t2m")
DEFAULT_N_CHANNELS = 13

# GMI channel set (GHz, polarization), ascending by frequency.
GMI_CHANNELS = (
    (10.65, "V"), (10.65, "H"), (18.7, "V"), (18.7, "H"), (23.8, "V"),
    (36.5, "V"), (36.5, "H"), (89.0, "V"), (89.0, "H"), (166.0, "V"),
    (166.0, "H"), (183.31, "V+-3"), (183.31, "V+-7"),
)

BINARY_MAGIC = b"DIEG"
BINARY_VERSION = 1
RATE_THRESHOLD = 0.01


class SurfaceClass(enum.IntEnum):
    OCEAN = 0
    LAND = 1
    COAST = 2


class PrecipLabel(enum.IntEnum):
    """Near-surface state. Values double as class indices (none, snow, rain).

    ``MIXED`` only appears in fused retrievals, never in records.
    """

    NONE = 0
    SNOW = 1
    RAIN = 2
    MIXED = 3


class RadarSource(enum.IntEnum):
    DPR = 0
    CPR = 1


def _parse_enum(enum_cls, text):
    try:
        return enum_cls[text.strip().upper()]
    except KeyError:
        raise ValueError(f"unknown {enum_cls.__name__} {text!r}") from None


def enum_name(member):
    return member.name.lower()


@dataclass(frozen=True)
class AncillaryState:
    lwp: float
    iwp: float
    wvp: float
    cape: float
    t2m: float

    def as_tuple(self):
        return (self.lwp, self.iwp, self.wvp, self.cape, self.t2m)


@dataclass(frozen=True)
class CoincidenceRecord:
    tb: tuple
    ancillary: AncillaryState
    surface: SurfaceClass
    label: PrecipLabel
    rate: float
    lat: float
    lon: float
    source: RadarSource


def _record_dtype(n_channels):
    return np.dtype(
        [("tb", "<f8", (n_channels,)), ("anc", "<f8", (N_ANCILLARY,)),
         ("surface", "u1"), ("label", "u1"), ("rate", "<f8"),
         ("lat", "<f8"), ("lon", "<f8"), ("source", "u1")]
    )


def validate_columns(tb, anc, surface, label, rate, lat, lon, source):
    """Check record invariants on column arrays; raise on the first violation."""

    def fail(field, mask, what):
        row = int(np.flatnonzero(mask)[0])
        raise ValidationError(f"record {row}: {field} {what}", field=field)

    if tb.ndim != 2:
        raise ValidationError("tb must be a 2-D array", field="tb")
    bad = ~np.all(np.isfinite(tb) & (tb >= 50.0) & (tb <= 350.0), axis=1)
    if bad.any():
        fail("tb", bad, "outside [50, 350] K")
    for j, name in enumerate(ANCILLARY_FIELDS):
        col = anc[:, j]
        if name == "t2m":
            bad = ~(np.isfinite(col) & (col >= 180.0) & (col <= 340.0))
            if bad.any():
                fail(name, bad, "outside [180, 340] K")
        else:
            bad = ~(np.isfinite(col) & (col >= 0.0))
            if bad.any():
                fail(name, bad, "negative or non-finite")
    bad = ~np.isin(surface, [s.value for s in SurfaceClass])
    if bad.any():
        fail("surface", bad, "not a surface class")
    bad = ~np.isin(label, [0, 1, 2])
    if bad.any():
        fail("label", bad, "not none/snow/rain")
    bad = ~np.isin(source, [s.value for s in RadarSource])
    if bad.any():
        fail("source", bad, "not a radar source")
    bad = ~(np.isfinite(rate) & (rate >= 0.0))
    if bad.any():
        fail("rate", bad, "negative or non-finite")
    bad = (rate == 0.0) != (label == PrecipLabel.NONE)
    if bad.any():
        fail("rate", bad, "must be 0 exactly when label is none")
    bad = ~(np.isfinite(lat) & (lat >= -90.0) & (lat <= 90.0))
    if bad.any():
        fail("lat", bad, "outside [-90, 90]")
    bad = ~(np.isfinite(lon) & (lon >= -180.0) & (lon < 180.0))
    if bad.any():
        fail("lon", bad, "outside [-180, 180)")


class PrecipDatabase:
    """Immutable, ordered collection of coincidences for one radar source.

    ``surface_class`` is ``None`` for an unstratified database (e.g. straight
    out of the synthetic generator); :meth:`stratify` splits it by surface.
    Row position is the record identity used for tie-breaking.
    """

    def __init__(self, tb, ancillary, surface, label, rate, lat, lon, source,
                 validate=True):
        tb = np.array(tb, dtype=np.float64, ndmin=2)
        n = len(rate)
        if n == 0:
            tb = tb.reshape(0, tb.shape[-1] if tb.size else DEFAULT_N_CHANNELS)
        cols = dict(
            tb=tb,
            ancillary=np.array(ancillary, dtype=np.float64).reshape(n, N_ANCILLARY),
            surface=np.asarray(surface, dtype=np.uint8).reshape(n),
            label=np.asarray(label, dtype=np.uint8).reshape(n),
            rate=np.asarray(rate, dtype=np.float64).reshape(n),
            lat=np.asarray(lat, dtype=np.float64).reshape(n),
            lon=np.asarray(lon, dtype=np.float64).reshape(n),
            source=np.asarray(source, dtype=np.uint8).reshape(n),
        )
        if cols["tb"].shape[0] != n:
            raise SchemaError("tb rows do not match the record count")
        if validate:
            validate_columns(cols["tb"], cols["ancillary"], cols["surface"],
                             cols["label"], cols["rate"], cols["lat"],
                             cols["lon"], cols["source"])
        for name, arr in cols.items():
            arr.setflags(write=False)
            setattr(self, name, arr)

    @property
    def n_channels(self):
        return self.tb.shape[1]

    @property
    def source_class(self):
        values = np.unique(self.source)
        if len(values) == 1:
            return RadarSource(int(values[0]))
        return None

    @property
    def surface_class(self):
        values = np.unique(self.surface)
        if len(values) == 1:
            return SurfaceClass(int(values[0]))
        return None

    def __len__(self):
        return len(self.rate)

    def __getitem__(self, i):
        return CoincidenceRecord(
            tb=tuple(self.tb[i].tolist()),
            ancillary=AncillaryState(*self.ancillary[i].tolist()),
            surface=SurfaceClass(int(self.surface[i])),
            label=PrecipLabel(int(self.label[i])),
            rate=float(self.rate[i]),
            lat=float(self.lat[i]),
            lon=float(self.lon[i]),
            source=RadarSource(int(self.source[i])),
        )

    @property
    def records(self):
        return [self[i] for i in range(len(self))]

    def __eq__(self, other):
        if not isinstance(other, PrecipDatabase):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("tb", "ancillary", "surface", "label", "rate", "lat",
                      "lon", "source")
        )

    def subset(self, index):
        """Database of the rows ``index`` (integer array or boolean mask)."""
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.int64)
        return PrecipDatabase(
            self.tb[index], self.ancillary[index], self.surface[index],
            self.label[index], self.rate[index], self.lat[index],
            self.lon[index], self.source[index], validate=False,
        )

    def filter_surface(self, surface):
        return self.subset(self.surface == SurfaceClass(surface))

    def stratify(self):
        """Split into one database per surface class present, in enum order."""
        return {
            s: self.filter_surface(s)
            for s in SurfaceClass
            if np.any(self.surface == s)
        }

    @classmethod
    def from_records(cls, records, n_channels=None):
        records = list(records)
        if not records:
            n = n_channels or DEFAULT_N_CHANNELS
            return cls(np.zeros((0, n)), np.zeros((0, N_ANCILLARY)), [], [],
                       [], [], [], [])
        return cls(
            [r.tb for r in records],
            [r.ancillary.as_tuple() for r in records],
            [int(r.surface) for r in records],
            [int(r.label) for r in records],
            [r.rate for r in records],
            [r.lat for r in records],
            [r.lon for r in records],
            [int(r.source) for r in records],
        )

    @classmethod
    def concatenate(cls, databases):
        dbs = list(databases)
        return cls(
            np.concatenate([d.tb for d in dbs]),
            np.concatenate([d.ancillary for d in dbs]),
            np.concatenate([d.surface for d in dbs]),
            np.concatenate([d.label for d in dbs]),
            np.concatenate([d.rate for d in dbs]),
            np.concatenate([d.lat for d in dbs]),
            np.concatenate([d.lon for d in dbs]),
            np.concatenate([d.source for d in dbs]),
            validate=False,
        )


###############################################################################
# Splitting
###############################################################################


def split_database(db, fractions=(0.7, 0.15, 0.15), seed=0):
    """Random train/validation/test partition.

    Validation and test receive ``floor(N * f)`` rows, train the rest. Each
    part keeps the original row order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(not f > 0.0 for f in fractions):
        raise ConfigError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions sum to {sum(fractions)!r}, not 1")
    n = len(db)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = math.floor(n * fractions[1])
    n_test = math.floor(n * fractions[2])
    n_train = n - n_val - n_test
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(db.subset(np.sort(p)) for p in parts)


###############################################################################
# File formats
###############################################################################


def csv_header(n_channels):
    return ([f"tb_{i + 1:02d}" for i in range(n_channels)]
            + list(ANCILLARY_FIELDS)
            + ["surface", "label", "rate", "lat", "lon", "source"])


def save_database(db, path, format=None):
    path = Path(path)
    format = format or _format_from_suffix(path)
    if format == "csv":
        _save_csv(db, path)
    elif format == "binary":
        _save_binary(db, path)
    else:
        raise ConfigError(f"unknown database format {format!r}")


def load_database(path, format=None, allow_mixed_surface=False):
    """Read a database written by :func:`save_database`.

    Mixed radar sources are always a schema error; mixed surface classes are
    one unless ``allow_mixed_surface`` is set.
    """
    path = Path(path)
    format = format or _format_from_suffix(path)
    if format == "csv":
        db = _load_csv(path)
    elif format == "binary":
        db = _load_binary(path)
    else:
        raise ConfigError(f"unknown database format {format!r}")
    if len(np.unique(db.source)) > 1:
        raise SchemaError(f"{path}: records mix radar sources")
    if not allow_mixed_surface and len(np.unique(db.surface)) > 1:
        raise SchemaError(f"{path}: records mix surface classes")
    return db


def _format_from_suffix(path):
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def _save_csv(db, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(csv_header(db.n_channels))
        for i in range(len(db)):
            writer.writerow(
                [repr(float(v)) for v in db.tb[i]]
                + [repr(float(v)) for v in db.ancillary[i]]
                + [enum_name(SurfaceClass(int(db.surface[i]))),
                   enum_name(PrecipLabel(int(db.label[i]))),
                   repr(float(db.rate[i])), repr(float(db.lat[i])),
                   repr(float(db.lon[i])),
                   enum_name(RadarSource(int(db.source[i])))]
            )


def _load_csv(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", row=1) from None
        n_channels = sum(1 for h in header if h.startswith("tb_"))
        if n_channels == 0 or header != csv_header(n_channels):
            raise ParseError(f"unexpected header {header}", row=1)
        width = len(header)
        tb, anc, surface, label, rate, lat, lon, source = ([] for _ in range(8))
        for rowno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}", row=rowno)
            try:
                tb.append([float(v) for v in row[:n_channels]])
                k = n_channels
                anc.append([float(v) for v in row[k:k + N_ANCILLARY]])
                k += N_ANCILLARY
                surface.append(_parse_enum(SurfaceClass, row[k]))
                label.append(_parse_enum(PrecipLabel, row[k + 1]))
                rate.append(float(row[k + 2]))
                lat.append(float(row[k + 3]))
                lon.append(float(row[k + 4]))
                source.append(_parse_enum(RadarSource, row[k + 5]))
            except ValueError as exc:
                raise ParseError(str(exc), row=rowno) from None
    n = len(rate)
    return PrecipDatabase(
        np.array(tb, dtype=np.float64).reshape(n, n_channels),
        np.array(anc, dtype=np.float64).reshape(n, N_ANCILLARY),
        surface, label, rate, lat, lon, source,
    )


_BIN_HEADER = struct.Struct("<4sHHQ")


def _save_binary(db, path):
    rec = np.zeros(len(db), dtype=_record_dtype(db.n_channels))
    rec["tb"] = db.tb
    rec["anc"] = db.ancillary
    for name in ("surface", "label", "rate", "lat", "lon", "source"):
        rec[name] = getattr(db, name)
    with open(path, "wb") as f:
        f.write(_BIN_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, db.n_channels, len(db)))
        f.write(rec.tobytes())


def _load_binary(path):
    raw = Path(path).read_bytes()
    if len(raw) < _BIN_HEADER.size:
        raise ParseError("truncated header", row=0)
    magic, version, n_channels, count = _BIN_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise ParseError(f"bad magic {magic!r}", row=0)
    if version != BINARY_VERSION:
        raise ParseError(f"unsupported version {version}", row=0)
    dtype = _record_dtype(n_channels)
    body = raw[_BIN_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        complete = len(body) // dtype.itemsize
        raise ParseError("truncated record", row=complete + 1)
    rec = np.frombuffer(body, dtype=dtype, count=count)
    return PrecipDatabase(rec["tb"], rec["anc"], rec["surface"], rec["label"],
                          rec["rate"], rec["lat"], rec["lon"], rec["source"])
