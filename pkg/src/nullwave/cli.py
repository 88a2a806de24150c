"""Command line driver: config parsing, subcommands and run directories.

Config files hold ``key = value`` lines, either fully dotted
(``grid.n = 64``) or grouped under ``[section]`` headers.  Overrides on the
command line use the same keys; a bare leaf name such as ``t_end`` is
accepted when it is unambiguous.  Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .diagnostics import (
    decay_fit,
    format_csv,
    l2_bound_check,
    scattering_convergence,
)
from .errors import ConfigError, DiagnosticError, NullwaveError
from .fields import THREADS_ENV, weighted_norm, write_snapshot
from .initdata import (
    KINDS,
    DataProfile,
    make_large_data,
    profile_state,
    weighted_initial_norms,
)
from .solver import RunConfig, run
from .tensors import DEFAULT_TOL, resolve_tensor, validate_null_condition

log = logging.getLogger("nullwave")

EXIT_OK = 0
EXIT_VERIFY = 1


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    parts = s.replace(",", " ").split()
    return tuple(float(p) for p in parts)


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "default") else float(s)


# key -> (parser, default, RunConfig field or None)
SCHEMA = {
    "grid.n": (int, 64, "n"),
    "grid.L": (float, 16.0, "L"),
    "time.cfl": (float, 0.5, "cfl"),
    "time.t_end": (float, 8.0, "t_end"),
    "time.method": (str, "rk4", "method"),
    "physics.delta": (float, 1.0 / 24.0, "delta"),
    "physics.tensor": (str, "mc-family", "tensor"),
    "physics.mc_c": (_floats, (1.0, 0.5, -0.25, 0.125), "mc_c"),
    "physics.q0": (_bool, True, "q0"),
    "physics.dealias": (_bool, True, "dealias"),
    "data.kind": (str, "gaussian", None),
    "data.width": (float, 1.1, None),
    "data.amplitude": (float, 0.01, None),
    "data.center": (_floats, (0.0, 0.0, 0.0), None),
    "data.radius": (float, 4.0, None),
    "data.velocity_amplitude": (float, 0.0, None),
    "data.epsilon": (_opt_float, None, None),
    "diagnostics.every": (int, 10, "diagnostics_every"),
    "diagnostics.snapshot_every": (int, 0, "snapshot_every"),
    "diagnostics.checkpoints": (_floats, (), "checkpoints"),
    "diagnostics.support_rel": (float, 1e-8, "support_rel"),
    "diagnostics.support_margin": (_opt_float, None, "support_margin"),
    "diagnostics.cone": (str, "auto", "cone"),
    "diagnostics.ks": (_bool, True, "ks"),
    "diagnostics.truncated": (_bool, True, "truncated"),
    "diagnostics.identities": (_bool, True, "identities"),
    "diagnostics.decay_window": (_floats, (2.0, 8.0), None),
    "diagnostics.norm_order": (int, 2, None),
    "output.dir": (str, "run", None),
    "run.seed": (int, 0, "seed"),
}

_LEAVES = {}
for _k in SCHEMA:
    _LEAVES.setdefault(_k.split(".", 1)[1], []).append(_k)


def resolve_key(key: str) -> str:
    key = key.strip()
    if key in SCHEMA:
        return key
    hits = _LEAVES.get(key, [])
    if len(hits) == 1:
        return hits[0]
    if len(hits) > 1:
        raise ConfigError(f"ambiguous key {key!r}; use one of {', '.join(hits)}")
    raise ConfigError(f"unknown config key {key!r}")


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(_fmt_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


@dataclass
class ResolvedConfig:
    """All settings for one invocation, with defaults filled in."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[resolve_key(key)]

    @property
    def run_config(self) -> RunConfig:
        kw = {f: self.values[k] for k, (_p, _d, f) in SCHEMA.items() if f is not None}
        return RunConfig(**kw)

    @property
    def profile(self) -> DataProfile:
        kind = self.values["data.kind"]
        if kind not in KINDS:
            raise ConfigError(f"data.kind must be one of {', '.join(KINDS)}, got {kind!r}")
        try:
            return DataProfile(
                kind,
                width=self.values["data.width"],
                amplitude=self.values["data.amplitude"],
                center=self.values["data.center"],
                radius=self.values["data.radius"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> str:
        """Fully resolved config in the input format (sorted by section)."""
        lines = []
        section = None
        for key in SCHEMA:
            sec, leaf = key.split(".", 1)
            if sec != section:
                if section is not None:
                    lines.append("")
                lines.append(f"[{sec}]")
                section = sec
            lines.append(f"{leaf} = {_fmt_value(self.values[key])}")
        return "\n".join(lines) + "\n"


def _set(values: dict, key: str, raw: str):
    full = resolve_key(key)
    parser = SCHEMA[full][0]
    try:
        values[full] = parser(raw.strip()) if parser is not str else raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {full}: {exc}") from None


def parse_config(text: str = "", overrides=()) -> ResolvedConfig:
    """Parse config text and ``key=value`` overrides into a validated config.

    Raises
    ------
    ConfigError
        Unknown or ambiguous keys, unparsable values, or values outside
        the admissible ranges.
    """
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {k: d for k, (_p, d, _f) in SCHEMA.items()}
    for sec in cp.sections():
        for key, raw in cp.items(sec, raw=True):
            _set(values, key if sec == "__top__" else f"{sec}.{key}", raw)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        k, v = ov.split("=", 1)
        _set(values, k, v)
    cfg = ResolvedConfig(values)
    cfg.run_config  # validates
    cfg.profile
    return cfg


def load_config(path, overrides=()) -> ResolvedConfig:
    text = "" if path is None else Path(path).read_text()
    return parse_config(text, overrides)


# pipelines ------------------------------------------------------------------

def build_data(cfg: ResolvedConfig):
    rc = cfg.run_config
    grid = rc.grid
    prof = cfg.profile
    eps = cfg.values["data.epsilon"]
    if eps is not None:
        return make_large_data(prof, prof, eps, grid)
    w1 = None
    va = cfg.values["data.velocity_amplitude"]
    if va != 0.0 and prof.kind != "shell":
        w1 = DataProfile(prof.kind, prof.width, va, prof.center, prof.radius)
    return profile_state(prof, w1, grid)


SUP_COLUMNS = ("t", "sup_dw", "sup_w_weighted", "sup_dw_weighted", "sup_dw_weighted32", "margin", "r_support")


def write_run_dir(out: Path, cfg: ResolvedConfig, art, data) -> dict:
    """Write every run artifact atomically; returns a summary dict."""
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.txt", cfg.echo())
    atomic_write_text(out / "energies.csv", art.csv_text())
    atomic_write_text(out / "sup_norms.csv", format_csv(art.rows, SUP_COLUMNS))
    summary = {"steps": art.steps, "dt": art.dt, "margin_min": art.margin_min}
    t, s = art.series("sup_dw")
    try:
        fit = decay_fit(t, s, tuple(cfg.values["diagnostics.decay_window"]))
        atomic_write_text(out / "decay_report.txt", fit.as_text())
        summary["decay_exponent"] = fit.exponent
    except DiagnosticError as exc:
        atomic_write_text(out / "decay_report.txt", f"unavailable: {exc}\n")
    if art.checkpoints and len(art.checkpoints) >= 3:
        rep = scattering_convergence(art.checkpoints)
        lines = ["t_k,t_k1,distance"]
        for (a, b), d in zip(zip(rep.times[:-1], rep.times[1:]), rep.differences):
            lines.append(f"{a:.17g},{b:.17g},{d:.17g}")
        lines.append(f"# decreasing = {'true' if rep.decreasing else 'false'}")
        atomic_write_text(out / "scattering.csv", "\n".join(lines) + "\n")
        summary["scattering_decreasing"] = rep.decreasing
    g = data.grid
    if data.scale() > 0:
        try:
            norms = weighted_initial_norms(data, cfg.values["diagnostics.norm_order"])
            text = norms.as_text()
        except NullwaveError as exc:
            text = f"unavailable: {exc}\n"
    else:
        text = weighted_initial_norms(data, cfg.values["diagnostics.norm_order"], check=False).as_text()
    text += f"w0_L2 = {weighted_norm(data.w, g):.17g}\n"
    atomic_write_text(out / "initial_norms.txt", text)
    l2 = l2_bound_check(art.rows, weighted_norm(data.v, g, kind="L1"), weighted_norm(data.v, g))
    summary["l2_bound_max_ratio"] = l2.max_ratio
    for step, st in art.snapshots:
        write_snapshot(out / "snapshots" / f"w_{step:06d}.nwv", st)
    lines = [f"{k} = {_fmt_value(v)}" for k, v in summary.items()]
    lines += [f"warning = {w}" for w in art.warnings]
    atomic_write_text(out / "summary.txt", "\n".join(lines) + "\n")
    return summary


def _progress(verbose):
    if not verbose:
        return None

    def cb(step, nsteps, t):
        print(f"step {step}/{nsteps} t={t:.4f}", file=sys.stderr)

    return cb


def cmd_validate_tensor(args) -> int:
    c = _floats(args.c) if args.c else None
    try:
        P = resolve_tensor(args.tensor, c)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    cert = validate_null_condition(P, args.tol)
    print(cert.summary())
    return EXIT_OK if cert.passed else EXIT_VERIFY


def _simulate(args, extra_overrides=()) -> int:
    cfg = load_config(args.config, list(extra_overrides) + list(args.overrides))
    out = Path(args.out) if args.out else Path(cfg.values["output.dir"])
    data = build_data(cfg)
    art = run(cfg.run_config, data, progress=_progress(args.verbose))
    summary = write_run_dir(out, cfg, art, data)
    print(f"wrote {out}: {art.steps} steps, dt={art.dt:.6g}, margin_min={summary['margin_min']:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    return _simulate(args)


def cmd_free_run(args) -> int:
    return _simulate(args, ("physics.tensor=zero", "physics.q0=false", "time.method=exact"))


def cmd_scatter_check(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if len(cfg.values["diagnostics.checkpoints"]) < 3:
        te = cfg.values["time.t_end"]
        cks = " ".join(repr(x) for x in np.linspace(te / 4, te, 4))
        cfg = load_config(args.config, list(args.overrides) + [f"diagnostics.checkpoints={cks}"])
    out = Path(args.out) if args.out else Path(cfg.values["output.dir"])
    data = build_data(cfg)
    art = run(cfg.run_config, data, progress=_progress(args.verbose))
    write_run_dir(out, cfg, art, data)
    rep = scattering_convergence(art.checkpoints)
    for (a, b), d in zip(zip(rep.times[:-1], rep.times[1:]), rep.differences):
        print(f"d({a:g},{b:g}) = {d:.6e}")
    print("strictly decreasing" if rep.decreasing else "NOT strictly decreasing")
    return EXIT_OK if rep.decreasing else EXIT_VERIFY


def cmd_mms(args) -> int:
    from .mms import mms_convergence

    dts = _floats(args.dts)
    res = mms_convergence(n=args.n, L=args.L, dts=dts, t_end=args.t_end, tensor=args.tensor)
    print(res.as_text(), end="")
    ok = abs(res.fitted_order - 4.0) <= 0.2 and res.spatial_error < res.errors[-1]
    print(f"fitted order {res.fitted_order:.4f}: {'ok' if ok else 'outside 4.0 +- 0.2 or spatially limited'}")
    if args.out:
        atomic_write_text(Path(args.out) / "mms.csv", res.as_text())
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_identity_suite(args) -> int:
    from .identities import run_battery

    checks = run_battery(n=args.n, L=args.L, states=args.states, seed=args.seed)
    text = "\n".join(c.line() for c in checks) + "\n"
    print(text, end="")
    if args.out:
        atomic_write_text(Path(args.out) / "identity_suite.txt", text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "energies.csv"
    if not path.exists():
        raise ConfigError(f"no energies.csv in {args.run_dir}")
    arr = np.genfromtxt(path, delimiter=",", names=True)
    arr = np.atleast_1d(arr)
    t = arr["t"]
    print(f"rows = {len(t)}, t in [{t.min():g}, {t.max():g}]")
    for col in arr.dtype.names[1:]:
        y = arr[col]
        fin = y[np.isfinite(y)]
        if len(fin):
            print(f"{col}: first {y[0]:.6g} last {y[-1]:.6g} min {fin.min():.6g} max {fin.max():.6g}")
        else:
            print(f"{col}: no finite values")
    sup = Path(args.run_dir) / "sup_norms.csv"
    if sup.exists():
        s = np.atleast_1d(np.genfromtxt(sup, delimiter=",", names=True))
        try:
            fit = decay_fit(s["t"], s["sup_dw"], _floats(args.window))
            print("decay fit of sup|dw|:")
            print(fit.as_text(), end="")
        except DiagnosticError as exc:
            print(f"decay fit unavailable: {exc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nullwave",
        description="Quasilinear null-form wave simulations on a periodic box.",
        epilog=f"FFT threads come from ${THREADS_ENV} (default: all available cores).",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress and log output on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate-tensor", help="certify the null condition for a tensor")
    s.add_argument("tensor", nargs="?", default="mc-family", help="preset name or path to a 64-value file")
    s.add_argument("--c", help="c vector for mc-family, four numbers")
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.set_defaults(func=cmd_validate_tensor)

    for name, fn, helptext in (
        ("simulate", cmd_simulate, "integrate the nonlinear equation and write a run directory"),
        ("free-run", cmd_free_run, "free-wave reference run with the exact propagator"),
        ("scatter-check", cmd_scatter_check, "run and test pullback convergence at checkpoints"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("-c", "--config", help="config file")
        s.add_argument("-o", "--out", help="run directory (overrides output.dir)")
        s.add_argument("overrides", nargs="*", help="key=value overrides")
        s.set_defaults(func=fn)

    s = sub.add_parser("mms-convergence", help="manufactured-solution time convergence")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--L", type=float, default=6.0)
    s.add_argument("--t-end", type=float, default=1.6)
    s.add_argument("--dts", default="0.08 0.04 0.02 0.01")
    s.add_argument("--tensor", default="mc-family")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_mms)

    s = sub.add_parser("identity-suite", help="vector-field and null-form residual battery")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--L", type=float, default=16.0)
    s.add_argument("--states", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_identity_suite)

    s = sub.add_parser("report", help="summarize an existing run directory")
    s.add_argument("run_dir")
    s.add_argument("--window", default="2 8")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except NullwaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: [cli] {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
