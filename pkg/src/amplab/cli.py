"""Command line front end: amplab derive | simulate | study."""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from . import spectral as sp
from .derivation import AssumptionError, SymbolParseError, derive_amplitude_system, parse_symbol
from .dynamics import (IntegrationBlowup, SDEParams, simulate, write_trajectory)
from .experiments import (KINDS, StudyConfig, StudyError, admissible_initial, result_summary,
                          run_study, version_string, write_outputs)
from .noise import (CoupledNoiseBatch, NoiseError, build_noise_coefficients, exponential_correlation,
                    load_correlation_table, make_coupling, white_noise)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
log = logging.getLogger("amplab")


class ConfigError(ValueError):
    pass


@dataclass
class SimulateConfig:
    eps: float = 0.1
    T: float = 1.0
    equation: str = "both"
    sample: int = 0


@dataclass
class RunConfig:
    study_values: dict = field(default_factory=dict)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    out: str = "amplab_out"
    snapshot: int = 1
    threads: int = 0
    log_level: str = "WARNING"

    def study(self, kind: str | None = None, **overrides) -> StudyConfig:
        vals = dict(self.study_values)
        if kind:
            vals["kind"] = kind
        vals.update(overrides)
        try:
            return StudyConfig(**vals)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


_RUN_KEYS = {"out": str, "snapshot": int, "threads": int, "log_level": str}


def _convert(name: str, text: str, default):
    text = text.strip()
    try:
        if name == "eps_ladder":
            return tuple(float(t) for t in text.replace(",", " ").split())
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name!r}: {text!r}") from None


def _section(parser, name: str, cls):
    proto = cls()
    defaults = {f.name: getattr(proto, f.name) for f in dataclasses.fields(cls)}
    if cls is StudyConfig:
        defaults["T0"] = None
    if not parser.has_section(name):
        return {}
    vals = {}
    for key, text in parser.items(name):
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        vals[key] = _convert(key, text, defaults[key])
    return vals


def load_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for sec in parser.sections():
        if sec not in ("study", "simulate", "run"):
            raise ConfigError(f"unknown section [{sec}]")
    study_vals = _section(parser, "study", StudyConfig)
    sim_vals = _section(parser, "simulate", SimulateConfig)
    run_vals = {}
    if parser.has_section("run"):
        for key, text in parser.items("run"):
            if key not in _RUN_KEYS:
                raise ConfigError(f"unknown key {key!r} in [run]")
            run_vals[key] = _convert(key, text, _RUN_KEYS[key]())
    cfg = RunConfig(study_values=study_vals, simulate=SimulateConfig(**sim_vals), **run_vals)
    try:
        cfg.study()
    except StudyError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.simulate.equation not in ("both", "sh", "gl"):
        raise ConfigError(f"equation must be both, sh or gl, not {cfg.simulate.equation!r}")
    return cfg


def _threads(args, cfg: RunConfig) -> int:
    if args.threads:
        return args.threads
    if cfg.threads:
        return cfg.threads
    env = os.environ.get("AMPLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"AMPLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _correlation(name: str, ell: float = 1.0):
    if name == "white":
        return white_noise()
    if name == "exponential":
        return exponential_correlation(ell)
    return load_correlation_table(name)


# --- subcommands ---------------------------------------------------------------

def cmd_derive(args) -> int:
    try:
        P = parse_symbol(args.symbol)
        system = derive_amplitude_system(P, args.nonlinearity, _correlation(args.correlation, args.ell),
                                         nu=args.nu)
    except SymbolParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssumptionError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    if args.json:
        print(system.to_json())
    else:
        print(system.to_text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "derive.json"), "w") as fh:
            fh.write(system.to_json() + "\n")
    return EXIT_PASS


def cmd_simulate(args, cfg: RunConfig) -> int:
    """One coupled SH/GL pair (or a single equation) from admissible data."""
    st, sim = cfg.study(threads=cfg.threads or 1), cfg.simulate
    if args.equation:
        sim = dataclasses.replace(sim, equation=args.equation)
    dom = sp.make_domain(st.L, sim.eps, c=st.K_factor)
    corr = st.correlation_spec()
    coupling = make_coupling(dom, build_noise_coefficients(corr, dom, st.construction), corr,
                             r=st.band_radius, decoupled=st.decoupled)
    noise = CoupledNoiseBatch(st.seed, 0, [sim.sample], dom, coupling)
    h = st.step(sim.eps)
    A0 = admissible_initial(st, dom, 0, [sim.sample])[0]
    pending: list = []

    def sh_noise(h):
        dsh, dgl = noise(h)
        pending.append(dgl[0])
        return dsh[0]

    def gl_noise(h):
        if sim.equation == "both":
            return pending.pop(0)
        return noise(h)[1][0]

    os.makedirs(cfg.out, exist_ok=True)
    stride = cfg.snapshot
    files = []
    runs = []
    if sim.equation in ("both", "sh"):
        runs.append(("SH", sp.FourierField(sp.pi_coeffs(A0, dom.N_eps, dom.K), sp.U_SPACE, dom),
                     SDEParams.sh(st.nu), sp.operator_symbol("SH", dom), sh_noise))
    if sim.equation in ("both", "gl"):
        runs.append(("GL", sp.FourierField(A0, sp.A_SPACE, dom), SDEParams.gl(st.nu),
                     sp.operator_symbol("GL", dom), gl_noise))
    for tag, init, params, symbol, stream in runs:
        rec = simulate(init, params, symbol, sim.T, h, stream, stride)
        rec = dataclasses.replace(rec, seed=st.seed)
        path = os.path.join(cfg.out, f"trajectory_{tag.lower()}.bin")
        write_trajectory(rec, path, {"sample": sim.sample, "version": version_string()})
        files.append(os.path.basename(path))
    manifest = {"files": files, "config": {"study": st.echo(), "simulate": dataclasses.asdict(sim)},
                "version": version_string(), "coupled": sim.equation == "both"}
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for f in files:
        print(os.path.join(cfg.out, f))
    return EXIT_PASS


def cmd_study(args, cfg: RunConfig) -> int:
    st = cfg.study(args.kind, threads=cfg.threads)
    res = run_study(st)
    csv_path, json_path = write_outputs(res, st, cfg.out)
    summary = result_summary(res)
    line = {"kind": args.kind, "pass": summary["pass"], "json": json_path, "csv": csv_path}
    if "slope" in summary:
        line["slope"] = summary["slope"]
        line["slope_ci"] = summary["slope_ci"]
    print(json.dumps(line, default=float))
    if summary.get("extras", {}).get("abort_fraction", 0) > 0.05:
        return EXIT_ABORT
    return EXIT_PASS if summary["pass"] else EXIT_FAIL


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amplab", description="SH / GL amplitude-equation laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("derive", help="derive the amplitude system for a symbol")
    d.add_argument("symbol", help="polynomial in z, e.g. '(1-z^2)^2*(9-z^2)^2'")
    d.add_argument("--nonlinearity", default="u^3", choices=["u^3", "u(u_x)^2"])
    d.add_argument("--correlation", default="white", help="white, exponential or a table path")
    d.add_argument("--ell", type=float, default=1.0)
    d.add_argument("--nu", type=float, default=1.0)
    d.add_argument("--json", action="store_true", help="print JSON instead of text")
    d.add_argument("--out", help="also write derive.json here")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--threads", type=int, default=0)
    common.add_argument("--snapshot", type=int, help="store every n-th step")
    common.add_argument("--decoupled", action="store_true", help="negative control: independent GL noise")

    s = sub.add_parser("simulate", parents=[common], help="run one coupled SH/GL pair")
    s.add_argument("--equation", choices=["both", "sh", "gl"])
    t = sub.add_parser("study", parents=[common], help="run a scaling study")
    t.add_argument("kind", choices=KINDS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "derive":
        return cmd_derive(args)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.study_values["seed"] = args.seed
        if args.decoupled:
            cfg.study_values["decoupled"] = True
        if args.out:
            cfg.out = args.out
        if args.snapshot is not None:
            if args.snapshot < 1:
                raise ConfigError("--snapshot must be positive")
            cfg.snapshot = args.snapshot
        logging.basicConfig(level=getattr(logging, cfg.log_level.upper(), logging.WARNING))
        cfg.threads = _threads(args, cfg)
        cfg.study(args.kind if args.command == "study" else None)
    except (ConfigError, StudyError) as exc:
        parser.print_usage(sys.stderr)
        print(f"amplab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "simulate":
            return cmd_simulate(args, cfg)
        return cmd_study(args, cfg)
    except IntegrationBlowup as exc:
        print(f"amplab: numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (StudyError, NoiseError, sp.SpectralError, ValueError) as exc:
        print(f"amplab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
