"""Command-line front end: ``sobolmap <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 stage failure.
Every command writes a resolved-configuration snapshot next to its outputs.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import shutil
import sys
import zlib
from pathlib import Path

import numpy as np

from .designs import (DesignError, MarginalDistribution, lhs, maximin_lhs, read_bounds_csv, read_design_csv,
                      scale, write_design_csv)
from .field import FieldEnsemble, FieldFormatError, GridField, read_array_field, read_ensemble, read_field, \
    write_array_field, write_ensemble, write_field
from .gp import GpFitError, GpOptions

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

logger = logging.getLogger("sobolmap")


class ConfigError(Exception):
    """Invalid arguments, configuration values or missing input files."""


class StageError(Exception):
    def __init__(self, stage: str, message: str, hint: str = ""):
        super().__init__(f"stage '{stage}' failed: {message}" + (f"\n{hint}" if hint else ""))
        self.stage = stage


# -- shared helpers -----------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _grid(text: str):
    from .campbell2d import Campbell2DGrid

    try:
        nr, _, nc = str(text).lower().partition("x")
        return Campbell2DGrid(int(nr), int(nc or nr))
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None


def _marginals(spec: str | None, d: int | None = None) -> list[MarginalDistribution]:
    from .campbell2d import MARGINALS

    if spec in (None, "", "unit"):
        if d is None:
            raise ConfigError("need --d or --bounds")
        return [MarginalDistribution.uniform(0.0, 1.0)] * d
    if spec == "campbell2d":
        return list(MARGINALS)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"bounds file not found: {spec}")
    return read_bounds_csv(path)


def _wavelet(family: str, levels) -> "WaveletSpec":
    from .wavelet import WaveletSpec

    lev = None if levels in (None, "", "full") else int(levels)
    return WaveletSpec(family, lev)


def _snapshot(values: dict, path: Path) -> None:
    lines = [f"{k} = {values[k]}" for k in sorted(values) if k not in ("func", "command")]
    path.write_text("\n".join(lines) + "\n")


def _snap_args(args, out: Path, is_dir: bool) -> None:
    values = {k: v for k, v in vars(args).items() if k != "func"}
    values["command"] = args.command
    target = out / "run_config.txt" if is_dir else out.with_name(out.name + ".config.txt")
    _snapshot(values, target)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _gp_options(args) -> GpOptions:
    return GpOptions(trend_selection=not args.no_trend_selection, nugget=args.nugget, restarts=args.restarts,
                     estimate_p=args.estimate_p, seed=args.seed)


def _make_design(n, method, sweeps, seed, marginals):
    if method == "maximin":
        return maximin_lhs(n, len(marginals), sweeps=sweeps, seed=seed, marginals=marginals)
    if method == "lhs":
        return lhs(n, len(marginals), seed=seed, marginals=marginals)
    raise ConfigError(f"unknown design method {method!r}")


def _evaluate_model(model: str, X: np.ndarray, grid_text: str, timeout=None, retries=0, jobs=1):
    """Maps for design rows from ``campbell2d`` or an ``exec:`` template -> list of GridField."""
    if model == "campbell2d":
        from .campbell2d import Campbell2D

        grid = _grid(grid_text)
        ev = Campbell2D(grid)
        vals = np.concatenate([ev(X[s:s + 256]) for s in range(0, X.shape[0], 256)])
        return [grid.field(v) for v in vals]
    if model.startswith("exec:"):
        from .external import ExternalModelAdapter

        adapter = ExternalModelAdapter.from_spec(model, timeout=timeout or None, retries=retries, jobs=jobs)
        return adapter.run(X)
    raise ConfigError(f"unknown model {model!r} (campbell2d or exec:\"CMD {{in}} {{out}}\")")


def _ensemble_from(X, fields, marginals):
    from .designs import design_from_native

    design = design_from_native(X, marginals) if marginals else None
    if design is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        design = design_from_native(X, [MarginalDistribution.uniform(a, b) for a, b in zip(lo, hi)])
    return FieldEnsemble.from_fields(design, fields)


# -- subcommands --------------------------------------------------------------------

def cmd_design(args) -> int:
    margs = _marginals(args.bounds, args.d)
    if args.d is not None and len(margs) != args.d:
        raise ConfigError(f"--d {args.d} disagrees with {len(margs)} bounds")
    design = _make_design(args.n, args.method, args.sweeps, args.seed, margs)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_design_csv(out, scale(design))
    _snap_args(args, out, False)
    return EXIT_OK


def cmd_eval(args) -> int:
    X = read_design_csv(_require(args.design, "design file"))
    margs = _marginals(args.bounds) if args.bounds else (_marginals("campbell2d") if args.model == "campbell2d" else None)
    fields = _evaluate_model(args.model, X, args.grid, args.timeout, args.retries, args.jobs)
    out = Path(args.output)
    write_ensemble(_ensemble_from(X, fields, margs), out, x_native=X)
    _snap_args(args, out, True)
    return EXIT_OK


def cmd_decompose(args) -> int:
    from .wavelet import coefficient_address, dwt2, dwt2_array, rank_coefficients

    spec = _wavelet(args.family, args.levels)
    src = _require(args.input, "input")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if src.is_dir():
        ens = read_ensemble(src)
        coeffs = dwt2_array(ens.values, spec).reshape(ens.n, -1)
        ranking = rank_coefficients(coeffs)
        lines = ["rank,flat_index,variance"] + [
            f"{r + 1},{int(j)},{float(ranking.empirical_variances[j])!r}" for r, j in enumerate(ranking.order)]
    else:
        dec = dwt2(read_field(src), spec)
        lines = ["flat_index,level,subband,row,col,value"]
        for j, c in enumerate(dec.coeffs):
            lev, band, (r, cc) = coefficient_address(j, dec.shape, spec)
            lines.append(f"{j},{lev},{band},{r},{cc},{float(c)!r}")
    out.write_text("\n".join(lines) + "\n")
    _snap_args(args, out, False)
    return EXIT_OK


def _load_ensemble(path, bounds):
    margs = _marginals(bounds) if bounds else None
    return read_ensemble(_require(path, "ensemble directory"), marginals=margs)


def cmd_fit(args) -> int:
    from .funcmeta import fit_functional_metamodel, save_bundle

    ens = _load_ensemble(args.ensemble, args.bounds)
    meta = fit_functional_metamodel(ens, _wavelet(args.family, args.levels), args.method, args.k, args.k_prime,
                                    _gp_options(args), fallback=args.fallback, n_jobs=args.jobs)
    out = Path(args.output)
    save_bundle(meta, out)
    _snap_args(args, out, True)
    return EXIT_OK


def _load_bundle(path):
    from .funcmeta import load_bundle

    return load_bundle(_require(path, "metamodel bundle"))


def cmd_predict(args) -> int:
    from .funcmeta import predict_map

    meta = _load_bundle(args.model)
    out = Path(args.output)
    if args.x is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_field(predict_map(meta, _floats(args.x)), out)
        _snap_args(args, out, False)
    elif args.design is not None:
        X = read_design_csv(_require(args.design, "design file"))
        vals = meta(X)
        fields = [GridField(v, meta.z1_range, meta.z2_range) for v in vals]
        margs = [MarginalDistribution.uniform(a, b) for a, b in zip(meta.lower, meta.upper)]
        write_ensemble(_ensemble_from(np.clip(X, meta.lower, meta.upper), fields, margs), out, x_native=X)
        _snap_args(args, out, True)
    else:
        raise ConfigError("give --x or --design")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .funcmeta import kfold_cv, mse, q2

    lines = []
    meta = _load_bundle(args.model) if args.model else None
    if args.test:
        if meta is None:
            raise ConfigError("--test needs --model")
        test = _load_ensemble(args.test, args.bounds)
        lines += [f"test_mse {mse(meta, test)!r}", f"test_q2 {q2(meta, test)!r}"]
    if args.folds:
        if not args.ensemble:
            raise ConfigError("--folds needs --ensemble")
        ens = _load_ensemble(args.ensemble, args.bounds)
        # a given bundle fixes the configuration being cross-validated
        method, k, k_prime, spec = ((meta.method, meta.k, meta.k_prime, meta.spec) if meta is not None else
                                    (args.method, args.k, args.k_prime, _wavelet(args.family, args.levels)))
        res = kfold_cv(ens, args.folds, method, k, k_prime, _gp_options(args),
                       refit_hyperparams=args.refit_hyperparams, seed=args.seed,
                       spec=spec, fallback=args.fallback, n_jobs=args.jobs)
        lines += [f"cv_folds {args.folds}", f"cv_mse {res.mse!r}", f"cv_q2 {res.q2!r}"]
        lines += [f"fold_{i + 1}_mse {e!r}" for i, e in enumerate(res.fold_mse)]
    if not lines:
        raise ConfigError("nothing to validate: give --model/--test and/or --ensemble/--folds")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _snap_args(args, out, False)
    return EXIT_OK


def cmd_converge(args) -> int:
    from .funcmeta import convergence_study

    ens = _load_ensemble(args.ensemble, args.bounds)
    test = _load_ensemble(args.test, args.bounds)
    res = convergence_study(ens, test, _ints(args.k_grid), _ints(args.n_grid), _ints(args.methods),
                            args.k_prime, _gp_options(args), _wavelet(args.family, args.levels), seed=args.seed,
                            tol=args.tol, fallback=args.fallback, n_jobs=args.jobs)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(res.to_csv())
    _snap_args(args, out, False)
    return EXIT_OK


def _evaluator(spec: str, grid_text: str, bounds, timeout=None, retries=0, jobs=1):
    """Evaluator and marginals for ``campbell2d``, ``meta:DIR`` or ``exec:...``."""
    if spec == "campbell2d":
        from .campbell2d import MARGINALS, Campbell2D

        return Campbell2D(_grid(grid_text)), list(bounds or MARGINALS)
    if spec.startswith("meta:"):
        meta = _load_bundle(spec[5:])
        margs = bounds or [MarginalDistribution.uniform(a, b) for a, b in zip(meta.lower, meta.upper)]
        return meta, list(margs)
    if spec.startswith("exec:"):
        from .external import ExternalEvaluator, ExternalModelAdapter

        if not bounds:
            raise ConfigError("exec evaluators need --bounds")
        adapter = ExternalModelAdapter.from_spec(spec, timeout=timeout or None, retries=retries, jobs=jobs)
        probe = np.array([m.ppf(0.5) for m in bounds])
        return ExternalEvaluator(adapter, len(bounds), probe), list(bounds)
    raise ConfigError(f"unknown evaluator {spec!r}")


def _run_sobol(evaluator, margs, estimator, N, seed, batch, sampling, budget_values, bootstrap, out: Path):
    from .sobol import DoubleLoopBudget, bootstrap_sd, doubleloop_maps, saltelli_maps

    if estimator == "saltelli":
        maps = saltelli_maps(evaluator, margs, N, seed=seed, batch=batch)
    elif estimator == "doubleloop":
        maps = doubleloop_maps(evaluator, margs, DoubleLoopBudget(*budget_values), seed=seed,
                               sampling=sampling, batch=batch)
    else:
        raise ConfigError(f"unknown estimator {estimator!r}")
    maps.save(out)
    if bootstrap:
        sd = bootstrap_sd(maps, bootstrap, seed=seed)
        for i in range(maps.d):
            write_array_field(sd.first[i], out / f"SD_S_{i + 1}.fld", maps.z1_range, maps.z2_range)
            write_array_field(sd.total[i], out / f"SD_ST_{i + 1}.fld", maps.z1_range, maps.z2_range)
            write_array_field(sd.gap[i], out / f"SD_GAP_{i + 1}.fld", maps.z1_range, maps.z2_range)
        write_array_field(sd.sum_first, out / "SD_SUM_S.fld", maps.z1_range, maps.z2_range)
    return maps


def cmd_sobol(args) -> int:
    bounds = _marginals(args.bounds) if args.bounds else None
    ev, margs = _evaluator(args.evaluator, args.grid, bounds, args.timeout, args.retries, args.jobs)
    if args.N < 2:
        raise ConfigError("--N must be at least 2")
    out = Path(args.output)
    budget = (args.n_outer_i, args.n_inner_i, args.n_outer_noti, args.n_inner_noti, args.n_var)
    _run_sobol(ev, margs, args.estimator, args.N, args.seed, args.batch, args.sampling, budget, args.bootstrap, out)
    _snap_args(args, out, True)
    return EXIT_OK


def cmd_campbell2d(args) -> int:
    from .campbell2d import campbell2d_eval

    x = _floats(args.x)
    if len(x) != 8:
        raise ConfigError(f"--x needs 8 values, got {len(x)}")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_field(campbell2d_eval(np.array(x), _grid(args.grid)), out)
    _snap_args(args, out, False)
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .campbell2d import analytic_first_order, cached_output_variance

    if args.index not in range(1, 9):
        raise ConfigError("--index must be in 1..8")
    grid = _grid(args.grid)
    var = cached_output_variance(grid, args.mc_n, args.seed, args.cache or None)
    field = analytic_first_order(args.index, grid, nodes=args.nodes, variance=var)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_field(field, out)
    _snap_args(args, out, False)
    return EXIT_OK


def _plot_files(inputs, output: Path, vmin, vmax, shared: bool, zoom: int):
    from .plot import shared_range, write_ppm

    arrays = [read_array_field(_require(p, "field file"))[0] for p in inputs]
    if shared and (vmin is None or vmax is None):
        lo, hi = shared_range(arrays)
        vmin = lo if vmin is None else vmin
        vmax = hi if vmax is None else vmax
    if len(arrays) == 1 and output.suffix == ".ppm":
        targets = [output]
    else:
        output.mkdir(parents=True, exist_ok=True)
        targets = [output / (Path(p).stem + ".ppm") for p in inputs]
    for arr, target in zip(arrays, targets):
        target.parent.mkdir(parents=True, exist_ok=True)
        write_ppm(arr, target, vmin, vmax, zoom=zoom)
    return targets


def cmd_plot(args) -> int:
    out = Path(args.output)
    _plot_files(args.fields, out, args.scale_min, args.scale_max, args.shared_scale, args.zoom)
    _snap_args(args, out, out.suffix != ".ppm")
    return EXIT_OK


# -- pipeline -----------------------------------------------------------------------

STAGES = ("design", "eval", "test", "fit", "validate", "sobol", "oracle", "plot")

SCHEMA = {
    "pipeline": {"workdir": "out", "seed": "0", "stages": ",".join(STAGES)},
    "design": {"n": "200", "method": "maximin", "sweeps": "100", "bounds": "campbell2d"},
    "model": {"model": "campbell2d", "grid": "64x64", "ensemble": "", "timeout": "0", "retries": "0", "jobs": "1"},
    "test": {"n": "0", "ensemble": ""},
    "fit": {"family": "db4", "levels": "full", "method": "3", "k": "30", "k_prime": "500", "nugget": "1e-08",
            "restarts": "5", "estimate_p": "false", "trend_selection": "true", "fallback": "false", "jobs": "1"},
    "validate": {"folds": "0", "refit_hyperparams": "false"},
    "sobol": {"estimator": "saltelli", "n": "1000", "batch": "256", "sampling": "lhs", "n_outer_i": "200",
              "n_inner_i": "1000", "n_outer_noti": "1000", "n_inner_noti": "100", "n_var": "20000",
              "bootstrap": "0"},
    "oracle": {"mc_n": "1000000", "nodes": "64", "seed": "0", "cache": ""},
    "plot": {"shared_scale": "true", "zoom": "4"},
}


class PipelineConfig:
    """Sectioned key-value configuration with every default resolved."""

    def __init__(self, parser: configparser.ConfigParser):
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key in parser[section]:
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key '{key}' in [{section}]")
        self.values = {s: {k: parser.get(s, k, fallback=v) for k, v in keys.items()} for s, keys in SCHEMA.items()}
        self._validate()

    @classmethod
    def read(cls, path) -> "PipelineConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            if not parser.read(_require(path, "config file")):
                raise ConfigError(f"cannot read config {path}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls(parser)

    def get(self, section, key) -> str:
        return self.values[section][key]

    def int(self, section, key) -> int:
        try:
            return int(float(self.values[section][key]))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer") from None

    def float(self, section, key) -> float:
        try:
            return float(self.values[section][key])
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number") from None

    def bool(self, section, key) -> bool:
        val = self.values[section][key].strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be true/false")

    @property
    def stages(self) -> list[str]:
        names = [s.strip() for s in self.get("pipeline", "stages").split(",") if s.strip()]
        for s in names:
            if s not in STAGES:
                raise ConfigError(f"unknown stage {s!r}")
        return [s for s in STAGES if s in names]

    def _validate(self):
        for sec in SCHEMA:
            for key, default in SCHEMA[sec].items():
                if default.lower() in ("true", "false"):
                    self.bool(sec, key)
                elif default.replace(".", "").replace("e-", "").isdigit():
                    self.float(sec, key)
        if self.int("fit", "method") not in (1, 2, 3):
            raise ConfigError("[fit] method must be 1, 2 or 3")
        if self.get("sobol", "estimator") not in ("saltelli", "doubleloop"):
            raise ConfigError("[sobol] estimator must be saltelli or doubleloop")
        if self.get("design", "method") not in ("lhs", "maximin"):
            raise ConfigError("[design] method must be lhs or maximin")
        _grid(self.get("model", "grid"))
        _wavelet(self.get("fit", "family"), self.get("fit", "levels"))
        self.stages  # noqa: B018 - validates names
        model = self.get("model", "model")
        if not self.ingest and model != "campbell2d" and not model.startswith("exec:"):
            raise ConfigError(f"[model] model must be campbell2d or exec:..., got {model!r}")

    @property
    def ingest(self) -> bool:
        return bool(self.get("model", "ensemble"))

    def text(self) -> str:
        lines = []
        for sec, keys in self.values.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in keys.items()]
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


def stage_seed(root: int, stage: str) -> int:
    """Deterministic per-stage seed derived from the root seed."""
    return int(np.random.SeedSequence([root, zlib.crc32(stage.encode())]).generate_state(1)[0])


class Pipeline:
    def __init__(self, cfg: PipelineConfig, workdir: Path | None = None):
        self.cfg = cfg
        self.work = Path(workdir or cfg.get("pipeline", "workdir"))
        self.root = cfg.int("pipeline", "seed")

    # artifact locations
    @property
    def design_path(self):
        return self.work / "design.csv"

    @property
    def ensemble_dir(self):
        return Path(self.cfg.get("model", "ensemble")) if self.cfg.ingest else self.work / "ensemble"

    @property
    def test_dir(self):
        given = self.cfg.get("test", "ensemble")
        return Path(given) if given else self.work / "test_ensemble"

    def plan(self) -> list[tuple[str, str]]:
        cfg = self.cfg
        items = []
        for st in cfg.stages:
            if st in ("design", "eval") and cfg.ingest:
                items.append((st, f"skipped (ingesting {self.ensemble_dir})"))
            elif st == "design":
                items.append((st, f"{cfg.get('design', 'method')} n={cfg.get('design', 'n')} -> {self.design_path}"))
            elif st == "eval":
                items.append((st, f"{cfg.get('model', 'model')} on {cfg.get('model', 'grid')} -> {self.ensemble_dir}"))
            elif st == "test":
                n = cfg.int("test", "n")
                items.append((st, f"n={n} -> {self.test_dir}" if n and not cfg.get("test", "ensemble")
                              else f"use {self.test_dir}" if cfg.get("test", "ensemble") else "skipped (n = 0)"))
            elif st == "fit":
                items.append((st, f"method {cfg.get('fit', 'method')} k={cfg.get('fit', 'k')} "
                                  f"k'={cfg.get('fit', 'k_prime')} {cfg.get('fit', 'family')} -> {self.work / 'metamodel'}"))
            elif st == "validate":
                items.append((st, f"folds={cfg.get('validate', 'folds')} test={self.test_dir} -> {self.work / 'validation.txt'}"))
            elif st == "sobol":
                items.append((st, f"{cfg.get('sobol', 'estimator')} N={cfg.get('sobol', 'n')} on metamodel -> {self.work / 'sobol'}"))
            elif st == "oracle":
                items.append((st, f"analytic first-order comparison -> {self.work / 'rmae.csv'}"
                              if self._campbell else "skipped (model is not campbell2d)"))
            elif st == "plot":
                items.append((st, f"heatmaps -> {self.work / 'plots'}"))
        return items

    @property
    def _campbell(self) -> bool:
        return self.cfg.get("model", "model") == "campbell2d"

    def _marker(self, stage):
        return self.work / ".stages" / f"{stage}.done"

    def run(self, resume: bool = False) -> None:
        self.work.mkdir(parents=True, exist_ok=True)
        (self.work / "config.resolved.ini").write_text(self.cfg.text())
        digest = self.cfg.digest()
        for stage in self.cfg.stages:
            marker = self._marker(stage)
            if resume and marker.exists() and marker.read_text().strip() == digest:
                logger.info("stage %s: up to date, skipped", stage)
                continue
            logger.info("stage %s: running", stage)
            try:
                getattr(self, f"stage_{stage}")()
            except (ConfigError, StageError):
                raise
            except Exception as exc:
                raise StageError(stage, f"{type(exc).__name__}: {exc}",
                                 f"fix the cause and rerun with --resume to continue from '{stage}'") from exc
            marker.parent.mkdir(exist_ok=True)
            marker.write_text(digest + "\n")

    def _marginals(self):
        b = self.cfg.get("design", "bounds")
        return _marginals(b) if b else None

    def stage_design(self):
        if self.cfg.ingest:
            return
        cfg = self.cfg
        design = _make_design(cfg.int("design", "n"), cfg.get("design", "method"), cfg.int("design", "sweeps"),
                              stage_seed(self.root, "design"), self._marginals())
        write_design_csv(self.design_path, scale(design))

    def _run_model(self, X, out: Path):
        cfg = self.cfg
        fields = _evaluate_model(cfg.get("model", "model"), X, cfg.get("model", "grid"),
                                 cfg.float("model", "timeout"), cfg.int("model", "retries"), cfg.int("model", "jobs"))
        write_ensemble(_ensemble_from(X, fields, self._marginals()), out, x_native=X)

    def stage_eval(self):
        if self.cfg.ingest:
            return
        if not self.design_path.exists():
            raise StageError("eval", f"missing {self.design_path}", "run the design stage first")
        self._run_model(read_design_csv(self.design_path), self.ensemble_dir)

    def stage_test(self):
        n = self.cfg.int("test", "n")
        if self.cfg.get("test", "ensemble") or not n:
            return
        margs = self._marginals() or _marginals(None, read_design_csv(self.design_path).shape[1])
        design = lhs(n, len(margs), seed=stage_seed(self.root, "test"), marginals=margs)
        self._run_model(scale(design), self.test_dir)

    def _ensemble(self, path):
        return read_ensemble(_require(path, "ensemble directory"), marginals=self._marginals())

    def _gp_options(self):
        cfg = self.cfg
        return GpOptions(trend_selection=cfg.bool("fit", "trend_selection"), nugget=cfg.float("fit", "nugget"),
                         restarts=cfg.int("fit", "restarts"), estimate_p=cfg.bool("fit", "estimate_p"),
                         seed=stage_seed(self.root, "fit"))

    def stage_fit(self):
        from .funcmeta import fit_functional_metamodel, save_bundle

        cfg = self.cfg
        meta = fit_functional_metamodel(self._ensemble(self.ensemble_dir),
                                        _wavelet(cfg.get("fit", "family"), cfg.get("fit", "levels")),
                                        cfg.int("fit", "method"), cfg.int("fit", "k"), cfg.int("fit", "k_prime"),
                                        self._gp_options(), fallback=cfg.bool("fit", "fallback"),
                                        n_jobs=cfg.int("fit", "jobs"))
        out = self.work / "metamodel"
        if out.exists():
            shutil.rmtree(out)
        save_bundle(meta, out)

    def stage_validate(self):
        from .funcmeta import kfold_cv, load_bundle, mse, q2

        cfg = self.cfg
        lines = []
        if self.test_dir.exists():
            meta = load_bundle(self.work / "metamodel")
            test = self._ensemble(self.test_dir)
            lines += [f"test_mse {mse(meta, test)!r}", f"test_q2 {q2(meta, test)!r}"]
        folds = cfg.int("validate", "folds")
        if folds:
            res = kfold_cv(self._ensemble(self.ensemble_dir), folds, cfg.int("fit", "method"), cfg.int("fit", "k"),
                           cfg.int("fit", "k_prime"), self._gp_options(),
                           refit_hyperparams=cfg.bool("validate", "refit_hyperparams"),
                           seed=stage_seed(self.root, "validate"),
                           spec=_wavelet(cfg.get("fit", "family"), cfg.get("fit", "levels")),
                           fallback=cfg.bool("fit", "fallback"), n_jobs=cfg.int("fit", "jobs"))
            lines += [f"cv_folds {folds}", f"cv_mse {res.mse!r}", f"cv_q2 {res.q2!r}"]
        (self.work / "validation.txt").write_text("\n".join(lines) + "\n")

    def stage_sobol(self):
        from .funcmeta import load_bundle

        cfg = self.cfg
        meta = load_bundle(self.work / "metamodel")
        margs = self._marginals() or [MarginalDistribution.uniform(a, b) for a, b in zip(meta.lower, meta.upper)]
        out = self.work / "sobol"
        if out.exists():
            shutil.rmtree(out)
        budget = tuple(cfg.int("sobol", k) for k in ("n_outer_i", "n_inner_i", "n_outer_noti", "n_inner_noti", "n_var"))
        _run_sobol(meta, margs, cfg.get("sobol", "estimator"), cfg.int("sobol", "n"),
                   stage_seed(self.root, "sobol"), cfg.int("sobol", "batch"), cfg.get("sobol", "sampling"),
                   budget, cfg.int("sobol", "bootstrap"), out)

    def stage_oracle(self):
        if not self._campbell:
            return
        from .campbell2d import Z_RANGE, analytic_first_order_all, cached_output_variance
        from .sobol import SensitivityMaps, rmae

        cfg = self.cfg
        grid = _grid(cfg.get("model", "grid"))
        cache = cfg.get("oracle", "cache") or str(self.work / "cache")
        var = cached_output_variance(grid, cfg.int("oracle", "mc_n"), cfg.int("oracle", "seed"), cache)
        exact = analytic_first_order_all(grid, nodes=cfg.int("oracle", "nodes"), variance=var)
        maps = SensitivityMaps.load(self.work / "sobol")
        lines = ["input,rmae_first_order"]
        for i in range(8):
            val = "NA" if i == 4 else repr(rmae(maps.first_order[i], exact[i]))
            lines.append(f"{i + 1},{val}")
        (self.work / "rmae.csv").write_text("\n".join(lines) + "\n")
        odir = self.work / "oracle"
        odir.mkdir(exist_ok=True)
        for i in range(8):
            write_array_field(exact[i], odir / f"S_{i + 1}_exact.fld", Z_RANGE, Z_RANGE)

    def stage_plot(self):
        cfg = self.cfg
        sob = self.work / "sobol"
        files = sorted(sob.glob("S_*.fld")) + sorted(sob.glob("ST_*.fld"))
        if not files:
            raise StageError("plot", f"no index maps under {sob}", "run the sobol stage first")
        _plot_files(files, self.work / "plots", 0.0 if cfg.bool("plot", "shared_scale") else None,
                    1.0 if cfg.bool("plot", "shared_scale") else None, False, cfg.int("plot", "zoom"))


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig.read(args.config)
    pipe = Pipeline(cfg, args.workdir)
    if args.dry_run:
        print(f"config {args.config} is valid; workdir {pipe.work}")
        for i, (stage, what) in enumerate(pipe.plan(), 1):
            print(f"{i}. {stage}: {what}")
        return EXIT_OK
    pipe.run(resume=args.resume)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _add_fit_options(p):
    p.add_argument("--method", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--k-prime", type=int, default=500)
    p.add_argument("--family", default="db4")
    p.add_argument("--levels", default="full")
    p.add_argument("--nugget", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--estimate-p", action="store_true")
    p.add_argument("--no-trend-selection", action="store_true")
    p.add_argument("--fallback", action="store_true", help="downgrade failed GP fits to linear models")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bounds", help="bounds CSV (name,lower,upper) or 'campbell2d'")


def _add_exec_options(p):
    p.add_argument("--timeout", type=float, default=0.0, help="seconds per simulator run (0: none)")
    p.add_argument("--retries", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sobolmap", description="Sensitivity maps for spatial model outputs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="space-filling input design (native units CSV)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--method", choices=("lhs", "maximin"), default="maximin")
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bounds", help="bounds CSV, 'campbell2d', or omit for [0,1]^d")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("eval", help="run a model on every design row into an ensemble directory")
    p.add_argument("--design", required=True)
    p.add_argument("--model", required=True, help="campbell2d or exec:\"CMD {in} {out}\"")
    p.add_argument("--grid", default="64x64")
    p.add_argument("--bounds")
    _add_exec_options(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="wavelet coefficients of a map, or ranking of an ensemble")
    p.add_argument("input")
    p.add_argument("--family", default="db4")
    p.add_argument("--levels", default="full")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("fit", help="fit a functional metamodel bundle")
    p.add_argument("--ensemble", required=True)
    _add_fit_options(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict maps with a metamodel bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--x")
    p.add_argument("--design")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="test-sample and/or k-fold validation (CV reuses --model's configuration)")
    p.add_argument("--model")
    p.add_argument("--test")
    p.add_argument("--ensemble")
    p.add_argument("--folds", type=int, default=0)
    p.add_argument("--refit-hyperparams", action="store_true")
    _add_fit_options(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("converge", help="MSE table over methods, k and n")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--k-grid", required=True)
    p.add_argument("--n-grid", required=True)
    p.add_argument("--methods", default="1,2,3")
    p.add_argument("--tol", type=float, default=0.05)
    _add_fit_options(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("sobol", help="first-order and total index maps")
    p.add_argument("--evaluator", required=True, help="campbell2d, meta:DIR or exec:\"CMD {in} {out}\"")
    p.add_argument("--estimator", choices=("saltelli", "doubleloop"), default="saltelli")
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--sampling", choices=("mc", "lhs"), default="lhs",
                   help="double-loop sampling: independent draws or Latin hypercube per nested sample")
    p.add_argument("--n-outer-i", type=int, default=200)
    p.add_argument("--n-inner-i", type=int, default=1000)
    p.add_argument("--n-outer-noti", type=int, default=1000)
    p.add_argument("--n-inner-noti", type=int, default=100)
    p.add_argument("--n-var", type=int, default=20000)
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for SD maps (0: none)")
    p.add_argument("--grid", default="64x64")
    p.add_argument("--bounds")
    _add_exec_options(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sobol)

    p = sub.add_parser("campbell2d", help="evaluate the Campbell2D function")
    p.add_argument("--x", required=True)
    p.add_argument("--grid", default="64x64")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_campbell2d)

    p = sub.add_parser("campbell2d-oracle", help="analytic first-order index map of Campbell2D")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--grid", default="64x64")
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--mc-n", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache", help="directory caching the Var(Y) map")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plot", help="PPM heatmaps of .fld maps")
    p.add_argument("fields", nargs="+")
    p.add_argument("--scale-min", type=float)
    p.add_argument("--scale-max", type=float)
    p.add_argument("--shared-scale", action="store_true", help="one color scale for all inputs")
    p.add_argument("--zoom", type=int, default=1)
    p.add_argument("-o", "--output", required=True, help="FILE.ppm for one map, else a directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pipeline", help="run a configured end-to-end analysis")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--resume", action="store_true", help="skip stages already completed with this config")
    p.set_defaults(func=cmd_pipeline)
    return parser


_CONFIG_ERRORS = (ConfigError, DesignError, FieldFormatError, FileNotFoundError, configparser.Error)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"sobolmap {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"sobolmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (GpFitError, RuntimeError, ValueError, ArithmeticError, OSError) as exc:
        print(f"sobolmap {args.command}: stage failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
