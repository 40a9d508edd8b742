"""Panel ingestion, stationarity transforms, cleaning and summaries.

Reads FRED-MD-style CSVs (mnemonic header, transform-code row, monthly
rows), applies the standard code semantics or a lighter scheme driven by
a shipped variable-class map, standardizes, replaces extreme outliers and
imputes missing cells by an iterative principal-components fit, and
summarizes persistence through autocorrelation percentile tables.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd


class DataError(ValueError):
    pass


# FRED-MD transform codes: 1 level, 2 diff, 3 double diff, 4 log,
# 5 log diff, 6 double log diff, 7 diff of growth rate
_VALID_TCODES = {1, 2, 3, 4, 5, 6, 7}
_LOG_TCODES = {4, 5, 6}
_LOSS = {1: 0, 4: 0, 2: 1, 5: 1, 3: 2, 6: 2, 7: 2}


@dataclass(frozen=True)
class Panel:
    """T x n data matrix with mnemonics, transform codes and date stamps."""

    values: np.ndarray
    mnemonics: tuple[str, ...]
    tcodes: np.ndarray
    dates: pd.DatetimeIndex
    means: np.ndarray | None = None
    sds: np.ndarray | None = None

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mnemonics", tuple(self.mnemonics))
        tc = np.array(self.tcodes, dtype=int)
        tc.setflags(write=False)
        object.__setattr__(self, "tcodes", tc)
        object.__setattr__(self, "dates", pd.DatetimeIndex(self.dates))
        T, n = vals.shape
        if len(self.mnemonics) != n or tc.shape != (n,) or len(self.dates) != T:
            raise DataError("inconsistent panel dimensions")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.dates, columns=list(self.mnemonics))

    def column(self, name: str) -> int:
        try:
            return self.mnemonics.index(name)
        except ValueError:
            raise DataError(f"series '{name}' not in panel") from None


@dataclass(frozen=True)
class TransformScheme:
    """Named stationarity scheme; 'light' overrides codes per variable class."""

    name: str
    class_map: dict | None = None
    class_codes: dict | None = None

    def code_for(self, mnemonic: str, fredmd_code: int) -> int:
        if self.name == "heavy":
            return fredmd_code
        if self.name != "light":
            raise DataError(f"unknown transform scheme '{self.name}'")
        cmap = self.class_map if self.class_map is not None else default_class_map()
        codes = self.class_codes if self.class_codes is not None else _LIGHT_CLASS_CODES
        cls = cmap.get(mnemonic, "other")
        code = codes.get(cls)
        if code is None:
            return fredmd_code
        return int(code)


# light scheme: real activity stays in (log) levels, prices are differenced
# once in logs, rates and spreads stay in levels; judgment documented in the
# shipped class map.
_LIGHT_CLASS_CODES = {
    "real": 4,
    "price": 5,
    "rate": 1,
    "spread": 1,
    "money": 5,
    "stock": 4,
    "fx": 4,
    "other": 1,
}

HEAVY = TransformScheme(name="heavy")
LIGHT = TransformScheme(name="light")


def default_class_map() -> dict:
    with importlib.resources.files("ddfm").joinpath("fredmd_classes.json").open() as fh:
        return json.load(fh)


def load_fredmd(path) -> Panel:
    """Parse a FRED-MD CSV: mnemonic header, tcode row, monthly data rows."""
    raw = pd.read_csv(path)
    if raw.shape[0] < 2 or raw.shape[1] < 2:
        raise DataError("file too small to be a FRED-MD panel")
    date_col = raw.columns[0]
    mnemonics = [str(c).strip() for c in raw.columns[1:]]
    tcode_row = raw.iloc[0, 1:]
    try:
        tcodes = np.array([int(float(v)) for v in tcode_row], dtype=int)
    except (TypeError, ValueError) as exc:
        raise DataError("second row must contain integer transform codes") from exc
    bad = set(tcodes) - _VALID_TCODES
    if bad:
        raise DataError(f"unknown transform codes {sorted(bad)}")
    body = raw.iloc[1:].copy()
    body = body[body[date_col].notna()]
    dates = pd.to_datetime(body[date_col], format="%m/%d/%Y", errors="coerce")
    if dates.isna().any():
        dates = pd.to_datetime(body[date_col], errors="coerce")
    if dates.isna().any():
        raise DataError("unparseable dates in the first column")
    if not dates.is_monotonic_increasing or dates.duplicated().any():
        raise DataError("dates must be strictly increasing")
    values = body.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    return Panel(values=values, mnemonics=mnemonics, tcodes=tcodes, dates=pd.DatetimeIndex(dates))


def _transform_series(x: np.ndarray, code: int, name: str) -> np.ndarray:
    out = np.full_like(x, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        if code in _LOG_TCODES:
            if np.nanmin(x) <= 0:
                raise DataError(f"series '{name}' has non-positive values under a log code")
            lx = np.log(x)
        if code == 1:
            out = x.copy()
        elif code == 2:
            out[1:] = np.diff(x)
        elif code == 3:
            out[2:] = np.diff(x, n=2)
        elif code == 4:
            out = lx
        elif code == 5:
            out[1:] = np.diff(lx)
        elif code == 6:
            out[2:] = np.diff(lx, n=2)
        elif code == 7:
            growth = x[1:] / x[:-1] - 1.0
            out[2:] = np.diff(growth)
        else:
            raise DataError(f"unknown transform code {code} for '{name}'")
    return out


def apply_transforms(panel: Panel, scheme: TransformScheme = HEAVY) -> Panel:
    """Apply per-variable stationarity transforms; trim rows lost to lags."""
    codes = np.array(
        [scheme.code_for(mn, int(tc)) for mn, tc in zip(panel.mnemonics, panel.tcodes)],
        dtype=int,
    )
    cols = [
        _transform_series(panel.values[:, i], codes[i], panel.mnemonics[i])
        for i in range(panel.n)
    ]
    values = np.column_stack(cols)
    loss = max((_LOSS[int(c)] for c in codes), default=0)
    return Panel(
        values=values[loss:],
        mnemonics=panel.mnemonics,
        tcodes=codes,
        dates=panel.dates[loss:],
    )


def restrict_window(panel: Panel, start=None, end=None) -> Panel:
    """Keep rows between start and end (inclusive, anything pandas parses)."""
    keep = np.ones(panel.T, dtype=bool)
    if start is not None:
        keep &= panel.dates >= pd.Timestamp(start)
    if end is not None:
        keep &= panel.dates <= pd.Timestamp(end)
    if not keep.any():
        raise DataError("empty sample window")
    return Panel(
        values=panel.values[keep],
        mnemonics=panel.mnemonics,
        tcodes=panel.tcodes,
        dates=panel.dates[keep],
        means=panel.means,
        sds=panel.sds,
    )


def drop_series(panel: Panel, names) -> Panel:
    names = set(names)
    missing = names - set(panel.mnemonics)
    if missing:
        raise DataError(f"cannot drop unknown series {sorted(missing)}")
    keep = [i for i, mn in enumerate(panel.mnemonics) if mn not in names]
    return Panel(
        values=panel.values[:, keep],
        mnemonics=[panel.mnemonics[i] for i in keep],
        tcodes=panel.tcodes[keep],
        dates=panel.dates,
    )


def standardize(panel: Panel) -> Panel:
    """Zero mean, unit variance per column; moments kept for unit recovery."""
    if np.isnan(panel.values).any():
        raise DataError("standardize requires a complete panel; run clean first")
    means = panel.values.mean(axis=0)
    sds = panel.values.std(axis=0, ddof=0)
    if np.any(sds <= 0):
        idx = [panel.mnemonics[i] for i in np.nonzero(sds <= 0)[0]]
        raise DataError(f"zero-variance columns: {idx}")
    return Panel(
        values=(panel.values - means) / sds,
        mnemonics=panel.mnemonics,
        tcodes=panel.tcodes,
        dates=panel.dates,
        means=means,
        sds=sds,
    )


def destandardize(panel: Panel) -> Panel:
    if panel.means is None or panel.sds is None:
        raise DataError("panel carries no standardization moments")
    return Panel(
        values=panel.values * panel.sds + panel.means,
        mnemonics=panel.mnemonics,
        tcodes=panel.tcodes,
        dates=panel.dates,
    )


def clean(
    panel: Panel,
    iqr_mult: float = 10.0,
    n_factors: int = 8,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> Panel:
    """Flag extreme outliers as missing and impute by iterative PCA.

    Outliers deviate from the column median by more than iqr_mult
    interquartile ranges.  Missing cells are initialized at column means
    and refilled with a rank-n_factors principal-components fit until the
    filled values change by less than tol in relative terms.  This is a
    deliberate simplification of full EM imputation schemes.
    """
    values = np.array(panel.values)
    med = np.nanmedian(values, axis=0)
    q75 = np.nanpercentile(values, 75, axis=0)
    q25 = np.nanpercentile(values, 25, axis=0)
    iqr = q75 - q25
    with np.errstate(invalid="ignore"):
        outlier = np.abs(values - med) > iqr_mult * iqr
    outlier &= ~np.isnan(values)
    values[outlier] = np.nan

    missing = np.isnan(values)
    frac = missing.mean(axis=0)
    if np.any(frac > 0.5):
        worst = [panel.mnemonics[i] for i in np.nonzero(frac > 0.5)[0]]
        raise DataError(f"columns with more than 50% missing after outlier removal: {worst}")
    if missing.any():
        values = _pca_impute(values, missing, n_factors, tol, max_iter)
    return Panel(
        values=values, mnemonics=panel.mnemonics, tcodes=panel.tcodes, dates=panel.dates
    )


def _pca_impute(
    values: np.ndarray, missing: np.ndarray, r: int, tol: float, max_iter: int
) -> np.ndarray:
    T, n = values.shape
    r = min(r, n, T)
    col_mean = np.nanmean(values, axis=0)
    filled = values.copy()
    filled[missing] = np.broadcast_to(col_mean, values.shape)[missing]
    for _ in range(max_iter):
        mu = filled.mean(axis=0)
        sd = filled.std(axis=0, ddof=0)
        sd[sd <= 0] = 1.0
        Z = (filled - mu) / sd
        U, sv, Vt = np.linalg.svd(Z, full_matrices=False)
        fit = (U[:, :r] * sv[:r]) @ Vt[:r]
        new_vals = fit * sd + mu
        prev = filled[missing]
        filled[missing] = new_vals[missing]
        denom = max(np.max(np.abs(prev)), 1.0)
        if np.max(np.abs(filled[missing] - prev)) <= tol * denom:
            break
    return filled


def autocorr_table(
    panel: Panel, lags: int = 8, percentiles=(5, 25, 50, 75, 95)
) -> pd.DataFrame:
    """Percentiles of absolute autocorrelations across variables, per lag."""
    X = panel.values
    if np.isnan(X).any():
        raise DataError("autocorrelation table requires a complete panel")
    T, n = X.shape
    Xc = X - X.mean(axis=0)
    denom = np.sum(Xc**2, axis=0)
    rows = []
    for lag in range(1, lags + 1):
        num = np.sum(Xc[:-lag] * Xc[lag:], axis=0)
        rho = np.abs(num / denom)
        rows.append(np.percentile(rho, percentiles))
    table = pd.DataFrame(
        np.array(rows).T,
        index=[f"p{p}" for p in percentiles],
        columns=[f"lag{k}" for k in range(1, lags + 1)],
    )
    return table
