"""Command-line pipeline: select | estimate | irf | simulate.

All commands read a JSON (or TOML) config document; command-line flags
override file values.  Outputs are tidy CSV/JSON artifacts plus a run
manifest carrying the config hash and seeds, so every run is reproducible.
Exit codes: 0 success, 1 validation problem, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, benchmark, data, em, kalman, modelsel, sim, structural
from . import init as init_mod
from .echelon import EchelonError, PolyMatrix, RmfdModel, assemble_statespace
from .modelsel import CandidateSpec


class ConfigError(ValueError):
    pass


_NUMERICAL_ERRORS = (
    em.EstimationError,
    init_mod.InitError,
    kalman.FilterError,
    structural.StructuralError,
    benchmark.BenchmarkError,
    modelsel.ModelSelectionError,
    sim.SimulationError,
    EchelonError,
    np.linalg.LinAlgError,
)


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text()
    if p.suffix.lower() == ".toml":
        try:
            import tomllib  # py>=3.11
        except ModuleNotFoundError:
            try:
                import tomli as tomllib  # type: ignore[no-redef]
            except ModuleNotFoundError:
                raise ConfigError("TOML configs need Python >= 3.11 or the tomli package")
        return tomllib.loads(text)
    return json.loads(text)


def _write_manifest(outdir: Path, command: str, cfg: dict) -> None:
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": digest,
        "package_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (outdir / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=2))


def _prepare_panel(cfg: dict) -> tuple[data.Panel, data.Panel]:
    """Load, transform, trim, clean.  Returns (standardized, cleaned) panels."""
    path = cfg.get("data")
    if not path:
        raise ConfigError("config must name a 'data' CSV")
    panel = data.load_fredmd(path)
    for name in cfg.get("drop", []):
        if name in panel.mnemonics:
            panel = data.drop_series(panel, [name])
    scheme = data.HEAVY if cfg.get("scheme", "heavy") == "heavy" else data.LIGHT
    panel = data.apply_transforms(panel, scheme)
    panel = data.restrict_window(panel, cfg.get("start"), cfg.get("end"))
    order_first = cfg.get("order_first", [])
    missing = [v for v in order_first if v not in panel.mnemonics]
    if missing:
        raise ConfigError(f"order_first names unknown series {missing}")
    if order_first:
        rest = [m for m in panel.mnemonics if m not in order_first]
        idx = [panel.column(m) for m in list(order_first) + rest]
        panel = data.Panel(
            values=panel.values[:, idx],
            mnemonics=[panel.mnemonics[i] for i in idx],
            tcodes=panel.tcodes[idx],
            dates=panel.dates,
        )
    cleaned = data.clean(panel, n_factors=int(cfg.get("impute_factors", 8)))
    return data.standardize(cleaned), cleaned


def _em_options(cfg: dict) -> em.EmOptions:
    e = cfg.get("em", {})
    return em.EmOptions(
        max_iter=int(e.get("max_iter", 1000)),
        tol=float(e.get("tol", 1e-5)),
        variance_floor=float(e.get("variance_floor", 1e-8)),
        moment_variant=e.get("moment_variant", "corrected"),
    )


def _candidate_from_cfg(cfg: dict) -> CandidateSpec:
    gamma = cfg.get("gamma")
    if gamma in (None, "select"):
        chosen = Path(cfg.get("output", ".")) / "chosen_spec.json"
        if not chosen.exists():
            raise ConfigError("gamma is 'select' but no chosen_spec.json found; run select first")
        payload = json.loads(chosen.read_text())
        return CandidateSpec(gamma=tuple(payload["gamma"]), p=payload["p"], s=payload["s"])
    kappa = max(gamma)
    p, s = modelsel.default_lag_orders(kappa)
    p = int(cfg.get("p", p))
    s = int(cfg.get("s", s))
    return CandidateSpec(gamma=tuple(gamma), p=p, s=s)


def cmd_select(cfg: dict) -> int:
    outdir = Path(cfg.get("output", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    Xs, _ = _prepare_panel(cfg)
    q, r = int(cfg["q"]), int(cfg["r"])
    if q > Xs.n:
        raise ConfigError(f"q={q} exceeds the panel width {Xs.n}")
    rows = modelsel.select(
        Xs.values,
        q,
        r,
        em_opts=_em_options(cfg),
        criterion=cfg.get("criterion", "bic"),
        jobs=int(cfg.get("jobs", 1)),
        seed=int(cfg.get("seed", 0)),
    )
    (outdir / "selection.csv").write_text(modelsel.rows_to_csv(rows))
    best = rows[0]
    (outdir / "chosen_spec.json").write_text(
        json.dumps({"gamma": list(best.spec.gamma), "p": best.spec.p, "s": best.spec.s})
    )
    _write_manifest(outdir, "select", cfg)
    failures = [r for r in rows if r.error]
    for row in failures:
        print(f"candidate {tuple(row.spec.gamma)} failed: {row.error}", file=sys.stderr)
    print(f"wrote {outdir / 'selection.csv'} ({len(rows)} candidates, best {tuple(best.spec.gamma)})")
    return 0


def cmd_estimate(cfg: dict) -> int:
    outdir = Path(cfg.get("output", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    Xs, _ = _prepare_panel(cfg)
    spec = _candidate_from_cfg(cfg)
    q = spec.gamma.q
    t0 = time.time()
    cca = init_mod.CcaOptions.for_model(spec.state_dim, q, seed=int(cfg.get("seed", 0)))
    model0, Se0, sx0 = init_mod.initial_model(
        Xs.values, spec.gamma, q, s_cap=spec.s, p_cap=spec.p, opts=cca
    )
    ss0 = assemble_statespace(model0, Se0, sx0)
    model, Se, sx, trace = em.em_estimate(
        Xs.values, spec.gamma, s_cap=spec.s, p_cap=spec.p, init=ss0, opts=_em_options(cfg)
    )
    (outdir / "model.json").write_text(em.result_to_json(model, Se, sx, trace))
    report = {
        "gamma": list(spec.gamma),
        "p": spec.p,
        "s": spec.s,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "loglik": trace.loglik[-1],
        "loglik_scaled": trace.loglik[-1] / Xs.T,
        "loglik_trace": trace.loglik,
        "runtime_sec": time.time() - t0,
        "mnemonics": list(Xs.mnemonics),
    }
    (outdir / "fit_report.json").write_text(json.dumps(report, indent=2))
    _write_manifest(outdir, "estimate", cfg)
    flag = "" if trace.converged else " (NOT converged)"
    print(f"wrote {outdir / 'model.json'}; loglik/T = {report['loglik_scaled']:.4f}{flag}")
    return 0


def _irf_csv(path: Path, mnemonics, point, lower=None, upper=None, units="original") -> None:
    lines = ["variable,horizon,point,lower,upper,units"]
    H = point.shape[0] - 1
    for i, name in enumerate(mnemonics):
        for h in range(H + 1):
            lo = "" if lower is None else f"{lower[h, i]:.6g}"
            up = "" if upper is None else f"{upper[h, i]:.6g}"
            lines.append(f"{name},{h},{point[h, i]:.6g},{lo},{up},{units}")
    path.write_text("\n".join(lines) + "\n")


def cmd_irf(cfg: dict) -> int:
    outdir = Path(cfg.get("output", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    model_path = outdir / "model.json"
    if not model_path.exists():
        raise ConfigError(f"no estimated model at {model_path}; run estimate first")
    payload = json.loads(model_path.read_text())
    model = RmfdModel.from_json(model_path.read_text())
    Se = np.asarray(payload["sigma_eps"])
    Xs, cleaned = _prepare_panel(cfg)
    spec = _candidate_from_cfg(cfg)
    q = spec.gamma.q

    shock_var = cfg.get("shock_variable", "FEDFUNDS")
    shock_idx = Xs.column(shock_var)
    if shock_idx >= q:
        raise ConfigError(
            f"shock variable '{shock_var}' must be among the first q={q} (recursively ordered) series"
        )
    size = float(cfg.get("normalization_size", 0.5))
    horizon = int(cfg.get("horizon", 48))

    H = structural.cholesky_identify(Se)
    irf = structural.structural_irf(model, H, shock_idx, horizon, shock_label=shock_var)
    irf = structural.finalize_irf(irf, Xs.sds, Xs.tcodes)
    irf = structural.normalize_response(irf, shock_idx, size)

    boot_cfg = cfg.get("bootstrap", {})
    draws = int(boot_cfg.get("draws", 0))
    lower = upper = None
    if draws > 0:
        opts = structural.BootstrapOptions(
            draws=draws,
            block_len=int(boot_cfg.get("block_len", 52)),
            level=float(boot_cfg.get("level", 0.68)),
            seed=boot_cfg.get("seed", cfg.get("seed", 0)),
            shock_col=shock_idx,
            normalize=(shock_idx, size),
            horizon=horizon,
            jobs=int(cfg.get("jobs", 1)),
            em=_em_options(cfg),
        )
        bands = structural.block_bootstrap(cleaned, spec, opts)
        lower, upper = bands.lower, bands.upper
        if bands.n_failed:
            print(f"{bands.n_failed}/{draws} bootstrap draws failed", file=sys.stderr)
    _irf_csv(outdir / "irf.csv", Xs.mnemonics, np.array(irf.responses), lower, upper)

    if cfg.get("benchmarks", False):
        _, k_sdfm = benchmark.estimate_sdfm(
            Xs.values, r=int(cfg.get("r", 8)), m=int(cfg.get("sdfm_m", 2)), q=q, horizon=horizon
        )
        b_irf = structural.StructuralIrf(
            responses=k_sdfm.coeffs @ np.linalg.cholesky(np.eye(q))[:, shock_idx],
            shock_label=shock_var,
        )
        b_irf = structural.finalize_irf(b_irf, Xs.sds, Xs.tcodes)
        b_irf = structural.normalize_response(b_irf, shock_idx, size)
        _irf_csv(outdir / "irf_sdfm.csv", Xs.mnemonics, np.array(b_irf.responses))

        focal = cfg.get("order_first", list(Xs.mnemonics[:4]))
        cols = [Xs.column(v) for v in focal]
        k_svar, _ = benchmark.estimate_svar(
            Xs.values[:, cols], lags=int(cfg.get("svar_lags", 9)), horizon=horizon
        )
        svar_shock = focal.index(shock_var)
        s_irf = structural.StructuralIrf(
            responses=k_svar.coeffs[:, :, svar_shock], shock_label=shock_var
        )
        s_irf = structural.finalize_irf(
            s_irf, Xs.sds[cols], Xs.tcodes[cols]
        )
        s_irf = structural.normalize_response(s_irf, svar_shock, size)
        _irf_csv(outdir / "irf_svar.csv", focal, np.array(s_irf.responses))

    _write_manifest(outdir, "irf", cfg)
    print(f"wrote {outdir / 'irf.csv'} (shock {shock_var}, impact {size})")
    return 0


def cmd_simulate(cfg: dict) -> int:
    outdir = Path(cfg.get("output", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    scfg = cfg.get("simulate", {})
    seed = int(scfg.get("seed", cfg.get("seed", 0)))
    if "model_json" in scfg:
        truth = RmfdModel.from_json(Path(scfg["model_json"]).read_text())
    else:
        truth = sim.random_canonical_model(
            tuple(scfg.get("gamma", [1, 1])),
            n=int(scfg.get("n", 20)),
            seed=seed,
            scale=float(scfg.get("scale", 0.5)),
            radius=float(scfg.get("radius", 0.6)),
            s_cap=scfg.get("s"),
            p_cap=scfg.get("p"),
        )
    q = truth.q
    sigma_eps = np.asarray(scfg.get("sigma_eps", np.eye(q).tolist()), dtype=float)
    spec = sim.DgpSpec(
        model=truth,
        sigma_eps=sigma_eps,
        sigma_xi=float(scfg.get("sigma_xi", 0.2)),
        T=int(scfg.get("T", 500)),
        burn_in=int(scfg.get("burn_in", 500)),
        seed=seed,
    )
    X, factors, shocks = sim.simulate(spec)
    dates = [f"{1960 + t // 12}-{t % 12 + 1:02d}-01" for t in range(X.shape[0])]
    names = [f"V{i:03d}" for i in range(1, truth.n + 1)]
    lines = ["sasdate," + ",".join(names), "Transform:," + ",".join(["1"] * truth.n)]
    for t, d in enumerate(dates):
        lines.append(d + "," + ",".join(f"{v:.8g}" for v in X[t]))
    (outdir / "panel.csv").write_text("\n".join(lines) + "\n")
    (outdir / "truth.json").write_text(
        json.dumps(
            {
                "model": json.loads(truth.to_json()),
                "sigma_eps": sigma_eps.tolist(),
                "sigma_xi": spec.sigma_xi,
                "seed": seed,
            }
        )
    )
    _write_manifest(outdir, "simulate", cfg)
    print(f"wrote {outdir / 'panel.csv'} ({X.shape[0]} x {X.shape[1]}) and truth.json")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddfm", description="Dynamic factor model IRF estimation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("select", "estimate", "irf", "simulate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON or TOML config document")
        sp.add_argument("--data", help="panel CSV (overrides config)")
        sp.add_argument("--output", help="output directory (overrides config)")
        sp.add_argument("--scheme", choices=["heavy", "light"])
        sp.add_argument("--q", type=int)
        sp.add_argument("--r", type=int)
        sp.add_argument("--gamma", help="comma-separated Kronecker indices or 'select'")
        sp.add_argument("--shock-variable", dest="shock_variable")
        sp.add_argument("--normalization-size", dest="normalization_size", type=float)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--draws", type=int, help="bootstrap draws")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    cfg = _load_config(args.config) if args.config else {}
    for key in (
        "data",
        "output",
        "scheme",
        "q",
        "r",
        "shock_variable",
        "normalization_size",
        "horizon",
        "seed",
        "jobs",
    ):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "gamma", None) is not None:
        g = args.gamma
        cfg["gamma"] = g if g == "select" else [int(v) for v in g.split(",")]
    if getattr(args, "draws", None) is not None:
        cfg.setdefault("bootstrap", {})["draws"] = args.draws
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "select": cmd_select,
        "estimate": cmd_estimate,
        "irf": cmd_irf,
        "simulate": cmd_simulate,
    }
    try:
        cfg = _merge_config(args)
        return handlers[args.command](cfg)
    except (ConfigError, data.DataError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
