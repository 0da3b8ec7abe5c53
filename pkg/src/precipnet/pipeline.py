"""
Per-surface retrieval suites: a detection network for occurrence and phase,
followed by phase-specific estimation networks fed with tb and the rates of
the k nearest database neighbors. Also DPR/CPR fusion, CDF matching and the
latitudinal (zonal) debias.
"""
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import (RATE_THRESHOLD, PrecipDatabase, PrecipLabel, RadarSource,
                   SurfaceClass, load_database, save_database)
from .errors import ConfigError, FitError, GridError, ParseError, RoutingError
from .evaluation import band_means
from .knn import DEFAULT_K, build_index

CLASS_ORDER = (PrecipLabel.NONE, PrecipLabel.SNOW, PrecipLabel.RAIN)
PHASES = (PrecipLabel.RAIN, PrecipLabel.SNOW)
PHASE_LOSS_P = {PrecipLabel.RAIN: 1, PrecipLabel.SNOW: 2}
MIN_ESTIMATOR_RECORDS = 20


###############################################################################
# Features
###############################################################################


def detection_features(db):
    """tb channels followed by lwp, iwp, wvp, cape, t2m (one row per record)."""
    return np.hstack([db.tb, db.ancillary])


def assemble_detection_features(record):
    return np.concatenate([np.asarray(record.tb, dtype=float),
                           np.asarray(record.ancillary.as_tuple(), dtype=float)])


def neighbor_rates(index, tb, k, exclude=None):
    """Rates of the k nearest indexed records, nearest first.

    ``exclude`` drops that record index (leave-one-out features for records
    that are themselves in the index). Short neighbor lists are padded with
    the farthest available rate.
    """
    want = k + (1 if exclude is not None else 0)
    _, idx = index.query_arrays(tb, want)
    if exclude is not None:
        idx = idx[idx != exclude][:k]
    rates = index.db.rate[idx]
    if len(rates) < k:
        rates = np.concatenate([rates, np.full(k - len(rates), rates[-1])])
    return rates


def assemble_estimation_features(record, index, k=DEFAULT_K):
    tb = np.asarray(record.tb, dtype=float)
    return np.concatenate([tb, neighbor_rates(index, tb, k)])


def estimation_features(db, index, k=DEFAULT_K, leave_one_out=False):
    """Estimation inputs for every record of ``db``.

    With ``leave_one_out`` the database must be the indexed one, and each
    record's own entry is excluded from its neighbor list.
    """
    if db.n_channels != index.n_channels:
        raise RoutingError("database and index channel counts differ")
    out = np.empty((len(db), db.n_channels + k))
    for i in range(len(db)):
        out[i, :db.n_channels] = db.tb[i]
        out[i, db.n_channels:] = neighbor_rates(
            index, db.tb[i], k, exclude=i if leave_one_out else None)
    return out


def one_hot(labels):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), len(CLASS_ORDER)))
    out[np.arange(len(labels)), labels] = 1.0
    return out


###############################################################################
# CDF matching
###############################################################################


@dataclass
class CdfMap:
    """Piecewise-linear quantile map from retrieved to reference rates."""

    source_knots: np.ndarray
    reference_knots: np.ndarray

    def __post_init__(self):
        self.source_knots = np.asarray(self.source_knots, dtype=np.float64)
        self.reference_knots = np.asarray(self.reference_knots, dtype=np.float64)
        if self.source_knots.shape != self.reference_knots.shape or self.source_knots.size == 0:
            raise FitError("knot arrays must be non-empty and equally long")
        if np.any(np.diff(self.source_knots) < 0) or np.any(np.diff(self.reference_knots) < 0):
            raise FitError("knots must be non-decreasing")

    def _tail_slopes(self):
        """Extension slopes: chords over the outer tenth of the knots at each
        end, steadier than the single outermost segment."""
        s, r = self.source_knots, self.reference_knots
        if len(s) < 2:
            return 1.0, 1.0
        m = max(1, (len(s) - 1) // 10)
        lo = (r[m] - r[0]) / (s[m] - s[0]) if s[m] > s[0] else 1.0
        hi = (r[-1] - r[-1 - m]) / (s[-1] - s[-1 - m]) if s[-1] > s[-1 - m] else 1.0
        return lo, hi

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        s, r = self.source_knots, self.reference_knots
        lo, hi = self._tail_slopes()
        y = np.interp(x, s, r)
        y = np.where(x < s[0], r[0] + lo * (x - s[0]), y)
        y = np.where(x > s[-1], r[-1] + hi * (x - s[-1]), y)
        return np.maximum(y, 0.0)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["source", "reference"])
            for a, b in zip(self.source_knots, self.reference_knots):
                writer.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if not rows or rows[0] != ["source", "reference"]:
            raise ParseError(f"{path}: not a CDF map file", row=1)
        try:
            values = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls(values[:, 0], values[:, 1])


def fit_cdf_map(retrieved, reference, n_knots=99):
    """Quantile knots at levels j / (n_knots + 1) of the positive parts of both samples."""
    retrieved = np.asarray(retrieved, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    retrieved = retrieved[retrieved > 0.0]
    reference = reference[reference > 0.0]
    if len(retrieved) == 0 or len(reference) == 0:
        raise FitError("CDF matching needs positive rates in both samples")
    if n_knots < 1:
        raise FitError("n_knots must be >= 1")
    levels = np.arange(1, n_knots + 1) / (n_knots + 1)
    src = np.maximum.accumulate(np.quantile(retrieved, levels))
    ref = np.maximum.accumulate(np.quantile(reference, levels))
    return CdfMap(src, ref)


###############################################################################
# Zonal debias
###############################################################################


@dataclass
class ZonalScale:
    band_edges: np.ndarray
    factors: np.ndarray
    phase: str = None       # phase the factors were fitted on, if any

    def __post_init__(self):
        self.band_edges = np.asarray(self.band_edges, dtype=np.float64)
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if len(self.band_edges) != len(self.factors) + 1:
            raise FitError("need one factor per latitude band")
        if self.band_edges[0] != -90.0 or self.band_edges[-1] != 90.0 or np.any(
                np.diff(self.band_edges) <= 0):
            raise FitError("band edges must increase from -90 to 90")
        if not np.all(np.isfinite(self.factors)) or np.any(self.factors < 0):
            raise FitError("factors must be finite and non-negative")

    def band_of(self, lat):
        lat = np.asarray(lat, dtype=np.float64)
        b = np.searchsorted(self.band_edges, lat, side="right") - 1
        return np.clip(b, 0, len(self.factors) - 1)

    def factor_at(self, lat):
        return self.factors[self.band_of(lat)]

    def to_json(self, path):
        Path(path).write_text(json.dumps(
            {"band_edges": self.band_edges.tolist(), "factors": self.factors.tolist(),
             "phase": self.phase}, indent=2) + "\n")

    @classmethod
    def from_json(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(d["band_edges"], d["factors"], d.get("phase"))


def band_edges_for(width):
    n = 180.0 / width
    if abs(n - round(n)) > 1e-9:
        raise FitError(f"band width {width} does not divide 180")
    return np.linspace(-90.0, 90.0, int(round(n)) + 1)


def fit_zonal_scale(passive, active, band_width=5.0, phase="snow"):
    """Per-band factor = active zonal mean / passive zonal mean (1 when undefined)."""
    if not passive.same_geometry(active):
        raise GridError("passive and active grids differ in resolution or extent")
    edges = band_edges_for(band_width)
    p = band_means(passive, edges, phase)
    a = band_means(active, edges, phase)
    factors = np.ones(len(p))
    ok = np.isfinite(p) & np.isfinite(a) & (p > 0.0)
    factors[ok] = a[ok] / p[ok]
    return ZonalScale(edges, factors, phase)


def apply_zonal_scale(scale, lat, rate, label=None, phase=None):
    """Multiply each rate by its latitude band's factor.

    With ``phase`` set, only retrievals whose label is that phase are scaled.
    """
    rate = np.asarray(rate, dtype=np.float64)
    factor = scale.factor_at(lat)
    if phase is not None:
        code = int(PrecipLabel[phase.upper()] if isinstance(phase, str) else phase)
        factor = np.where(np.asarray(label, dtype=int) == code, factor, 1.0)
    return rate * factor


###############################################################################
# Retrieval
###############################################################################


@dataclass(frozen=True)
class PixelRetrieval:
    probs: tuple            # (none, snow, rain)
    label: PrecipLabel
    rate: float
    estimated: bool
    source: RadarSource


@dataclass(frozen=True)
class FusedRetrieval:
    label: PrecipLabel
    rate: float
    contributors: frozenset


def fuse(dpr, cpr):
    """Combine DPR- and CPR-trained retrievals of one pixel.

    Precipitating if either detects; differing phases give ``MIXED``. The rate
    is the mean over detecting, estimated retrievals, 0 when there are none.
    """
    wet = [r for r in (dpr, cpr) if r.label != PrecipLabel.NONE]
    if not wet:
        return FusedRetrieval(PrecipLabel.NONE, 0.0, frozenset())
    labels = {r.label for r in wet}
    label = labels.pop() if len(labels) == 1 else PrecipLabel.MIXED
    rates = [r.rate for r in wet if r.estimated]
    rate = float(np.mean(rates)) if rates else 0.0
    return FusedRetrieval(label, rate, frozenset(r.source for r in wet))


@dataclass
class SuiteConfig:
    detector_hidden: tuple = (64, 64, 64, 64)
    estimator_hidden: tuple = (64, 64, 64, 64, 64)
    batch_norm: bool = False
    dropout_rate: float = 0.10
    estimator_dropout_rate: float = None    # None: same as dropout_rate
    k: int = DEFAULT_K
    metric: str = "euclidean"
    detector_train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(
        loss="cross_entropy", learning_rate=1e-4))
    estimator_train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(
        loss="lp", learning_rate=1e-5))
    fit_cdf: bool = True
    n_knots: int = 99
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["detector_hidden"] = list(self.detector_hidden)
        d["estimator_hidden"] = list(self.estimator_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("detector_train", "estimator_train"):
            if key in d and isinstance(d[key], dict):
                base = asdict(getattr(cls(), key))
                base.update(d[key])
                d[key] = nn.TrainConfig(**base)
        for key in ("detector_hidden", "estimator_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class RetrievalSuite:
    surface: SurfaceClass
    source: RadarSource
    detector: nn.NetworkParams
    rain_estimator: nn.NetworkParams
    snow_estimator: nn.NetworkParams
    neighbor_index: object
    k: int = DEFAULT_K
    cdf_maps: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.detector.n_out != 3:
            raise ConfigError("detector must have 3 outputs")
        for est in (self.rain_estimator, self.snow_estimator):
            if est is not None and est.n_out != 1:
                raise ConfigError("estimators must have 1 output")
        if self.rain_estimator is not None and not rain_estimation_available(
                self.source, self.surface):
            raise ConfigError("CPR land/coast suites cannot carry a rain estimator")
        if self.rain_estimator is not None and self.rain_estimator is self.snow_estimator:
            raise ConfigError("rain and snow need separate estimators")

    def estimator(self, phase):
        return self.rain_estimator if PrecipLabel(phase) == PrecipLabel.RAIN else self.snow_estimator

    def retrieve_pixel(self, record):
        return retrieve_pixel(self, record)


def rain_estimation_available(source, surface):
    return not (RadarSource(source) == RadarSource.CPR
                and SurfaceClass(surface) in (SurfaceClass.LAND, SurfaceClass.COAST))


def _finish_rates(suite, phase, raw):
    rates = np.asarray(raw, dtype=np.float64).ravel()
    cdf = suite.cdf_maps.get(PrecipLabel(phase))
    if cdf is not None:
        rates = cdf(rates)
    # detected precipitation is never below the occurrence threshold
    return np.maximum(rates, RATE_THRESHOLD)


def retrieve_pixel(suite, record):
    if SurfaceClass(record.surface) != suite.surface:
        raise RoutingError(
            f"record surface {SurfaceClass(record.surface).name} routed to "
            f"{suite.surface.name} suite")
    x = assemble_detection_features(record)
    probs = nn.predict(suite.detector, x[None, :])[0]
    label = CLASS_ORDER[int(np.argmax(probs))]
    rate, estimated = 0.0, False
    if label != PrecipLabel.NONE:
        est = suite.estimator(label)
        if est is not None:
            feats = assemble_estimation_features(record, suite.neighbor_index, suite.k)
            rate = float(_finish_rates(suite, label, nn.predict(est, feats[None, :]))[0])
            estimated = True
    return PixelRetrieval(tuple(float(p) for p in probs), label, rate, estimated,
                          suite.source)


def retrieve_database(suite, db):
    """Vectorized :func:`retrieve_pixel` over a database; returns column arrays."""
    if len(db) and np.any(db.surface != suite.surface):
        raise RoutingError(f"database contains records outside the {suite.surface.name} suite")
    if len(db) and db.n_channels != suite.neighbor_index.n_channels:
        raise RoutingError("database and suite channel counts differ")
    n = len(db)
    probs = nn.predict(suite.detector, detection_features(db)) if n else np.zeros((0, 3))
    label = np.array([int(CLASS_ORDER[i]) for i in np.argmax(probs, axis=1)], dtype=int)
    rate = np.zeros(n)
    estimated = np.zeros(n, dtype=bool)
    for phase in PHASES:
        est = suite.estimator(phase)
        rows = np.flatnonzero(label == phase)
        if est is None or len(rows) == 0:
            continue
        feats = estimation_features(db.subset(rows), suite.neighbor_index, suite.k)
        rate[rows] = _finish_rates(suite, phase, nn.predict(est, feats))
        estimated[rows] = True
    return {"probs": probs, "label": label, "rate": rate, "estimated": estimated,
            "lat": db.lat.copy(), "lon": db.lon.copy(),
            "source": np.full(n, int(suite.source))}


###############################################################################
# Training
###############################################################################


def _specs_seed(seed, role):
    return int(np.random.SeedSequence([seed, role]).generate_state(1)[0])


def train_detector(train_db, val_db, config):
    x = detection_features(train_db)
    mean, std = nn.standardization(x)
    specs = nn.dense_stack(x.shape[1], config.detector_hidden, 3, "softmax",
                           config.batch_norm, config.dropout_rate)
    net = nn.init_network(specs, _specs_seed(config.seed, 0), mean, std)
    tc = config.detector_train
    tc = nn.TrainConfig(**{**asdict(tc), "seed": _specs_seed(config.seed, 1)})
    return nn.train(net, (x, one_hot(train_db.label)),
                    (detection_features(val_db), one_hot(val_db.label)), tc)


def train_estimator(phase, train_db, val_db, index, config):
    """Fit the estimator for one phase; ``None`` when there is too little data."""
    phase = PrecipLabel(phase)
    train_rows = np.flatnonzero(train_db.label == phase)
    val_rows = np.flatnonzero(val_db.label == phase)
    if len(train_rows) < MIN_ESTIMATOR_RECORDS or len(val_rows) == 0:
        return None, []
    x = np.empty((len(train_rows), train_db.n_channels + config.k))
    for n, i in enumerate(train_rows):
        x[n, :train_db.n_channels] = train_db.tb[i]
        x[n, train_db.n_channels:] = neighbor_rates(index, train_db.tb[i], config.k,
                                                    exclude=i)
    y = train_db.rate[train_rows]
    xv = estimation_features(val_db.subset(val_rows), index, config.k)
    yv = val_db.rate[val_rows]
    mean, std = nn.standardization(x)
    dropout = config.dropout_rate
    if config.estimator_dropout_rate is not None:
        dropout = config.estimator_dropout_rate
    specs = nn.dense_stack(x.shape[1], config.estimator_hidden, 1, "relu",
                           config.batch_norm, dropout)
    role = 2 if phase == PrecipLabel.RAIN else 4
    net = nn.init_network(specs, _specs_seed(config.seed, role), mean, std,
                          output_bias=float(np.mean(y)))
    tc = nn.TrainConfig(**{**asdict(config.estimator_train), "loss": "lp",
                           "p": PHASE_LOSS_P[phase],
                           "seed": _specs_seed(config.seed, role + 1)})
    return nn.train(net, (x, y), (xv, yv), tc)


def train_suite(train_db, val_db, config, test_db=None, source=None, surface=None):
    """Train detector and estimators for one (source, surface) database.

    CDF maps are fitted on ``test_db`` when given and ``config.fit_cdf`` is set.
    Returns ``(suite, histories)``.
    """
    source = RadarSource(source if source is not None else train_db.source_class)
    surface = SurfaceClass(surface if surface is not None else train_db.surface_class)
    index = build_index(train_db, config.metric)
    detector, det_hist = train_detector(train_db, val_db, config)
    histories = {"detector": det_hist}
    estimators = {}
    for phase in PHASES:
        if phase == PrecipLabel.RAIN and not rain_estimation_available(source, surface):
            estimators[phase] = None
            continue
        est, hist = train_estimator(phase, train_db, val_db, index, config)
        estimators[phase] = est
        if est is not None:
            histories[phase.name.lower()] = hist
    suite = RetrievalSuite(surface, source, detector, estimators[PrecipLabel.RAIN],
                           estimators[PrecipLabel.SNOW], index, config.k)
    if test_db is not None and config.fit_cdf:
        for phase in PHASES:
            est = estimators[phase]
            rows = np.flatnonzero(test_db.label == phase)
            if est is None or len(rows) == 0:
                continue
            feats = estimation_features(test_db.subset(rows), index, config.k)
            raw = nn.predict(est, feats).ravel()
            try:
                suite.cdf_maps[phase] = fit_cdf_map(raw, test_db.rate[rows], config.n_knots)
            except FitError:
                pass
    return suite, histories


###############################################################################
# Bundles and retrieval files
###############################################################################


def save_suite(suite, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nn.save_network(suite.detector, d / "detector.bin")
    for phase, name in ((PrecipLabel.RAIN, "rain"), (PrecipLabel.SNOW, "snow")):
        est = suite.estimator(phase)
        for stale in (d / f"{name}.bin", d / f"cdf_{name}.csv"):
            if stale.exists():
                stale.unlink()
        if est is not None:
            nn.save_network(est, d / f"{name}.bin")
        if phase in suite.cdf_maps:
            suite.cdf_maps[phase].to_csv(d / f"cdf_{name}.csv")
    index = suite.neighbor_index
    save_database(index.db, d / "index_db.bin", "binary")
    meta = {
        "surface": suite.surface.name.lower(),
        "source": suite.source.name.lower(),
        "k": suite.k,
        "metric": index.metric.kind,
        "cov_inverse": None if index.metric.cov_inverse is None
        else index.metric.cov_inverse.tolist(),
        "n_channels": index.n_channels,
        "database": "index_db.bin",
        "n_records": len(index.db),
        "rain_estimator": suite.rain_estimator is not None,
        "snow_estimator": suite.snow_estimator is not None,
    }
    (d / "index_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_suite(directory):
    d = Path(directory)
    meta = json.loads((d / "index_meta.json").read_text())
    db = load_database(d / meta["database"], "binary")
    index = build_index(db, meta["metric"], cov_inverse=meta["cov_inverse"])
    est = {}
    cdf = {}
    for phase, name in ((PrecipLabel.RAIN, "rain"), (PrecipLabel.SNOW, "snow")):
        path = d / f"{name}.bin"
        est[phase] = nn.load_network(path) if meta[f"{name}_estimator"] else None
        if (d / f"cdf_{name}.csv").exists():
            cdf[phase] = CdfMap.from_csv(d / f"cdf_{name}.csv")
    return RetrievalSuite(SurfaceClass[meta["surface"].upper()],
                          RadarSource[meta["source"].upper()],
                          nn.load_network(d / "detector.bin"),
                          est[PrecipLabel.RAIN], est[PrecipLabel.SNOW], index,
                          int(meta["k"]), cdf)


RETRIEVAL_COLUMNS = ["lat", "lon", "source", "label", "rate", "estimated",
                     "p_none", "p_snow", "p_rain"]
FUSED_COLUMNS = ["lat", "lon", "label", "rate", "contributors"]


def write_retrievals_csv(path, result):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RETRIEVAL_COLUMNS)
        for i in range(len(result["label"])):
            p = result["probs"][i]
            writer.writerow([
                repr(float(result["lat"][i])), repr(float(result["lon"][i])),
                RadarSource(int(result["source"][i])).name.lower(),
                PrecipLabel(int(result["label"][i])).name.lower(),
                repr(float(result["rate"][i])), int(bool(result["estimated"][i])),
                repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
            ])


def read_retrievals_csv(path):
    """Read a retrieval CSV (pixel or fused) back into column arrays."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=1) from None
        if header not in (RETRIEVAL_COLUMNS, FUSED_COLUMNS):
            raise ParseError(f"{path}: unexpected header {header}", row=1)
        rows = list(reader)
    cols = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    try:
        out = {
            "lat": np.array(cols["lat"], dtype=float),
            "lon": np.array(cols["lon"], dtype=float),
            "label": np.array([int(PrecipLabel[v.upper()]) for v in cols["label"]], dtype=int),
            "rate": np.array(cols["rate"], dtype=float),
        }
        if header == RETRIEVAL_COLUMNS:
            out["estimated"] = np.array(cols["estimated"], dtype=int).astype(bool)
            out["source"] = np.array([int(RadarSource[v.upper()]) for v in cols["source"]],
                                     dtype=int)
            out["probs"] = np.column_stack([np.array(cols[c], dtype=float)
                                            for c in ("p_none", "p_snow", "p_rain")])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return out


def fuse_results(dpr, cpr):
    """Row-wise :func:`fuse` over two retrieval column sets for the same pixels."""
    n = len(dpr["label"])
    if len(cpr["label"]) != n:
        raise RoutingError("fusion inputs differ in length")
    label = np.zeros(n, dtype=int)
    rate = np.zeros(n)
    contributors = []
    for i in range(n):
        a = PixelRetrieval(tuple(dpr["probs"][i]), PrecipLabel(int(dpr["label"][i])),
                           float(dpr["rate"][i]), bool(dpr["estimated"][i]), RadarSource.DPR)
        b = PixelRetrieval(tuple(cpr["probs"][i]), PrecipLabel(int(cpr["label"][i])),
                           float(cpr["rate"][i]), bool(cpr["estimated"][i]), RadarSource.CPR)
        fused = fuse(a, b)
        label[i] = int(fused.label)
        rate[i] = fused.rate
        contributors.append(fused.contributors)
    return {"lat": dpr["lat"], "lon": dpr["lon"], "label": label, "rate": rate,
            "contributors": contributors}


def write_fused_csv(path, fused):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(FUSED_COLUMNS)
        for i in range(len(fused["label"])):
            names = "+".join(s.name.lower() for s in sorted(fused["contributors"][i]))
            writer.writerow([repr(float(fused["lat"][i])), repr(float(fused["lon"][i])),
                             PrecipLabel(int(fused["label"][i])).name.lower(),
                             repr(float(fused["rate"][i])), names])
