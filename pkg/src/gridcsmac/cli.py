"""Batch front-end: one TOML scenario drives every experiment, output is CSV.

Subcommands: generate, calibrate, analyze, optimize, simulate, compare.
Every CSV starts with ``#`` provenance lines holding the command and the hash
of the fully resolved configuration, so identical configs give identical
files.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import tomli

from . import calibrate as cal
from . import optimizer as opt
from . import simulator as sim
from .cscodec import ReconstructionConfig
from .griddata import SpatialCorrelation, gen_field
from .macmodel import EnergyParams, MacConfig, MacTiming, expected_energy_ri, frame_stats, \
    event_probabilities, node_energy_sf, prob_sufficient, solve_chain

log = logging.getLogger("gridcsmac")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INFEASIBLE = 0, 2, 3, 4
SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "run": {"seed": 0, "jobs": 1},
    "field": {"n_s": 64, "n_t": 256, "wind_fraction": 0.5, "start": 0, "layout": "block",
              "d_scale": 20.0, "max_km": 1.0},
    "timing": {"sf0": 8, "bo_max": 8, "k_tau_max": 10, "priority": 2, "nb": 5, "l_mac": 2,
               "l_ack": 2, "t_ack": 1, "t_ack_ti": 4},
    "energy": {"e_idle": 0.228, "e_tx": 10.022, "e_rx": 11.290, "e_sens": 11.290},
    "calibrate": {"sizes": [[64, 64], [128, 128], [256, 256]], "target_mse": 0.05,
                  "target_success": 0.95, "trials": 200, "basis": "haar", "grid": [],
                  "search": "bisect", "max_iterations": 100},
    "mac": {"n_s": 64, "m_s": 16, "k_tau": 3, "bo": 4, "p_suff": 0.9,
            "bo_sweep": [2, 3, 4, 5], "k_tau_sweep": [1, 2, 3, 4, 5, 6, 7, 8],
            "n_s_sweep": [48, 64, 80, 96], "p_values": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45,
                                                       0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]},
    "optimizer": {"p_step": 0.01, "n_s_values": [32, 48, 64, 80, 96], "m_t": 180, "n_t": 256,
                  "p_err": [0.02, 0.05, 0.1, 0.15, 0.2], "partial_bo": 3, "partial_p_s": 0.45,
                  "target_delays": [400, 750], "n_total": [1024, 2048, 4096],
                  "group_sizes": [65, 96], "channel_m_t": 151, "include_csma": True},
    "simulate": {"n_ri": 10000, "n_sf": 100000, "h_values": [2, 5, 10], "retry": True,
                 "reset_on_defer": False, "campaign_m_t": 180, "campaigns": 5},
}


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    return None


def _check(node, ref, path, text):
    for key, val in node.items():
        where = f"{path}{key}"
        line = _line_of(text, key) if text else None
        at = f"line {line}: " if line else ""
        if key not in ref:
            raise ConfigError(f"{at}unknown key '{where}'")
        want = ref[key]
        if isinstance(want, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{at}'{where}' must be a section")
            _check(val, want, where + ".", text)
            continue
        ok = (isinstance(val, bool) if isinstance(want, bool)
              else isinstance(val, (int, float)) and not isinstance(val, bool) if isinstance(want, float)
              else isinstance(val, int) and not isinstance(val, bool) if isinstance(want, int)
              else isinstance(val, type(want)))
        if not ok:
            raise ConfigError(f"{at}'{where}' expects {type(want).__name__}, got {type(val).__name__}")


def _merge(base, upd):
    for k, v in upd.items():
        if isinstance(v, dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path=None, overrides=(), seed=None, jobs=None) -> dict:
    """Defaults updated by the TOML file, then ``KEY=VALUE`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        _check(doc, DEFAULTS, "", text)
        if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {doc['schema_version']}")
        _merge(cfg, doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            val = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            val = raw
        doc = val
        for part in reversed(key.strip().split(".")):
            doc = {part: doc}
        _check(doc, DEFAULTS, "", None)
        _merge(cfg, doc)
    if seed is not None:
        cfg["run"]["seed"] = seed
    if jobs is not None:
        cfg["run"]["jobs"] = jobs
    _validate(cfg)
    return cfg


def _validate(cfg):
    try:
        timing(cfg), energy(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    f = cfg["field"]
    if f["n_s"] < 1 or f["n_t"] < 1:
        raise ConfigError("field dimensions must be positive")
    m = cfg["mac"]
    if not 0 <= m["m_s"] <= m["n_s"]:
        raise ConfigError("mac.m_s must lie in [0, mac.n_s]")
    if not 0 < m["p_suff"] < 1:
        raise ConfigError("mac.p_suff must lie in (0, 1)")
    if cfg["run"]["jobs"] < 1:
        raise ConfigError("run.jobs must be >= 1")


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def timing(cfg) -> MacTiming:
    return MacTiming(**cfg["timing"])


def energy(cfg) -> EnergyParams:
    return EnergyParams(**cfg["energy"])


def write_csv(path: Path, cfg, command: str, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# command: {command}\n# config_hash: {config_hash(cfg)}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    log.info("wrote %s", path)
    return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "inf" if math.isinf(x) else repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (tuple, list)):
        return " ".join(str(v) for v in x)
    return x


def _pool_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(jobs) as ex:
        return list(ex.map(fn, items))


# ---- generate -------------------------------------------------------------

def cmd_generate(cfg, out: Path):
    f = cfg["field"]
    seed = cfg["run"]["seed"]
    corr = SpatialCorrelation.random(f["n_s"], seed=seed, max_km=f["max_km"], d_scale=f["d_scale"])
    field = gen_field(f["n_s"], f["n_t"], corr=corr, wind_fraction=f["wind_fraction"], seed=seed,
                      start=f["start"], layout=f["layout"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "field.csv"
    field.to_csv(path, {"command": "generate", "config_hash": config_hash(cfg),
                        "generation_nodes": " ".join(map(str, np.flatnonzero(field.generation_nodes)))})
    log.info("wrote %s", path)
    return [path]


# ---- calibrate ------------------------------------------------------------

def _calibrate_one(args):
    cfg, n_s, n_t = args
    c = cfg["calibrate"]
    spec = cal.CalibrationSpec(n_s, n_t, c["target_mse"], c["target_success"], c["trials"],
                               c["grid"] or None, cfg["run"]["seed"], c["basis"],
                               ReconstructionConfig(max_iterations=c["max_iterations"], tol=1e-7))
    if not c["grid"]:
        log.info("no grid given for (%d, %d): using the default grid", n_s, n_t)
    return n_s, n_t, cal.calibrate_full(spec, search=c["search"])


def cmd_calibrate(cfg, out: Path):
    jobs = cfg["run"]["jobs"]
    res = _pool_map(_calibrate_one, [(cfg, int(a), int(b)) for a, b in cfg["calibrate"]["sizes"]], jobs)
    paths = [write_csv(out / "calibration.csv", cfg, "calibrate",
                       ["n_s", "n_t", "m_s_thresh", "m_t_thresh", "m_thresh", "m_s", "m_t"],
                       [(a, b, r.m_s_thresh, r.m_t_thresh, r.m_thresh, r.m_s, r.m_t) for a, b, r in res])]
    for a, b, r in res:
        paths.append(write_csv(out / f"curves_{a}x{b}.csv", cfg, "calibrate", ["mode", "M", "success_rate"],
                               [(mode, m, rate) for mode, c in r.curves.items() for m, rate in c.points]))
    return paths


# ---- analyze --------------------------------------------------------------

def _pr_row(args):
    sweep, n_s, m_s, k, bo, ps, tm = args
    return sweep, n_s, m_s, k, bo, ps, prob_sufficient(MacConfig.uniform(k, bo, ps), n_s, m_s, tm)


def cmd_analyze(cfg, out: Path):
    m = cfg["mac"]
    tm = timing(cfg)
    pts = []
    for bo in m["bo_sweep"]:
        pts += [("bo", m["n_s"], m["m_s"], m["k_tau"], bo, p, tm) for p in m["p_values"]]
    for k in m["k_tau_sweep"]:
        pts += [("k_tau", m["n_s"], m["m_s"], k, 3, p, tm) for p in m["p_values"]]
    for n in m["n_s_sweep"]:
        pts += [("n_s", n, opt.reference_m_s(n), m["k_tau"], m["bo"], p, tm) for p in m["p_values"]]
    rows = _pool_map(_pr_row, pts, cfg["run"]["jobs"])
    return [write_csv(out / "pr_vs_ps.csv", cfg, "analyze",
                      ["sweep", "n_s", "m_s", "k_tau", "bo", "p_s", "pr_sufficient"], rows)]


# ---- optimize -------------------------------------------------------------

def _opt_row(args):
    n, m_s, tm, p_suff, space, ep, kind = args
    try:
        if kind == "full":
            r = opt.optimize_mac(n, m_s, tm, p_suff, space)
        elif kind == "bo":
            r = opt.optimize_partial(n, m_s, tm, p_suff, bo=space[1], space=space[0])
        else:
            r = opt.optimize_partial(n, m_s, tm, p_suff, p_s=space[1], space=space[0])
    except opt.InfeasibleError as exc:
        return n, m_s, p_suff, kind, math.inf, None, exc.best_prob, math.nan
    e = expected_energy_ri(r.config, n, m_s, tm, ep) if m_s < n or kind == "full" else math.nan
    return n, m_s, p_suff, kind, float(r.delay), r.config, r.prob, e


def _cfg_cols(c):
    return (c.k_tau, c.bo, c.p_s) if c else ("", "", "")


def cmd_optimize(cfg, out: Path):
    o, m = cfg["optimizer"], cfg["mac"]
    tm, ep = timing(cfg), energy(cfg)
    space = opt.SearchSpace(p_step=o["p_step"])
    jobs = cfg["run"]["jobs"]
    ns = o["n_s_values"]
    tasks = [(n, opt.reference_m_s(n), tm, m["p_suff"], space, ep, "full") for n in ns]
    if o["include_csma"]:
        tasks += [(n, n, tm, m["p_suff"], space, ep, "full") for n in ns]
    tasks += [(n, opt.reference_m_s(n), tm, m["p_suff"], (space, o["partial_bo"]), ep, "bo") for n in ns]
    tasks += [(n, opt.reference_m_s(n), tm, m["p_suff"], (space, o["partial_p_s"]), ep, "p_s") for n in ns]
    tasks += [(m["n_s"], m["m_s"], tm, 1 - pe, space, ep, "full") for pe in o["p_err"]]
    res = _pool_map(_opt_row, tasks, jobs)
    full = {(r[0], r[1], r[2]): r for r in res if r[3] == "full"}

    rows = []
    for n in ns:
        ms = opt.reference_m_s(n)
        cs = full[(n, ms, m["p_suff"])]
        csma = full.get((n, n, m["p_suff"]))
        rows.append((n, ms, opt.tdma_delay(n, tm), float(csma[4]) if csma else math.nan,
                     opt.tdma_delay(n, tm, True, ms), cs[4]))
    paths = [write_csv(out / "delay_vs_ns.csv", cfg, "optimize",
                       ["n_s", "m_s", "tdma", "csma", "tdma_cs", "csma_cs"], rows)]

    rows = []
    for pe in o["p_err"]:
        r = full[(m["n_s"], m["m_s"], 1 - pe)]
        rows.append((pe, opt.tdma_delay(m["n_s"], tm), opt.tdma_delay(m["n_s"], tm, True, m["m_s"]), r[4],
                     *_cfg_cols(r[5])))
    paths.append(write_csv(out / "delay_vs_perr.csv", cfg, "optimize",
                           ["p_err", "tdma", "tdma_cs", "csma_cs", "k_tau", "bo", "p_s"], rows))

    rows = [(r[0], r[1], r[3], r[4], *_cfg_cols(r[5]), r[6]) for r in res
            if r[2] == m["p_suff"] and r[1] == opt.reference_m_s(r[0]) and r[0] in ns]
    paths.append(write_csv(out / "partial_vs_full.csv", cfg, "optimize",
                           ["n_s", "m_s", "variant", "delay", "k_tau", "bo", "p_s", "pr"], rows))

    rows = []
    for n in ns:
        ms = opt.reference_m_s(n)
        cs = full[(n, ms, m["p_suff"])]
        rows.append((n, ms, opt.tdma_energy(n, tm, ep), opt.tdma_energy(n, tm, ep, True, ms), cs[7],
                     opt.tdma_energy(n, tm, ep) * o["n_t"], opt.tdma_energy(n, tm, ep, True, ms) * o["m_t"],
                     cs[7] * o["m_t"]))
    paths.append(write_csv(out / "energy_vs_ns.csv", cfg, "optimize",
                           ["n_s", "m_s", "tdma_ri", "tdma_cs_ri", "csma_cs_ri", "tdma_field", "tdma_cs_field",
                            "csma_cs_field"], rows))

    rows = []
    for target in o["target_delays"]:
        g_t = opt.max_group_size("tdma", target, tm)
        try:
            g_c = opt.max_group_size("csma-cs", target, tm, p_suff=m["p_suff"], space=space)
        except opt.InfeasibleError:
            g_c = 0
        rows.append((target, g_t, g_c))
    paths.append(write_csv(out / "group_sizes.csv", cfg, "optimize", ["target_delay", "n_s_tdma", "n_s_csma_cs"],
                           rows))

    g_t, g_c = o["group_sizes"]
    rows = []
    for n_total in o["n_total"]:
        sc = opt.BandwidthScenario(n_total, g_t, g_c, o["channel_m_t"], o["n_t"])
        rows.append((n_total, g_t, g_c, *opt.channels_required(sc)))
    paths.append(write_csv(out / "channels.csv", cfg, "optimize",
                           ["n_total", "n_s_tdma", "n_s_csma_cs", "tdma", "csma_cs"], rows))
    return paths


# ---- simulate / compare ---------------------------------------------------

def _opts(cfg):
    s = cfg["simulate"]
    return sim.ProtocolOptions(retry=s["retry"], reset_on_defer=s["reset_on_defer"])


def _sim_pr(args):
    cfg, bo, ps = args
    m, s = cfg["mac"], cfg["simulate"]
    c = MacConfig.uniform(m["k_tau"], bo, ps)
    return bo, ps, sim.empirical_prob_sufficient(m["n_s"], m["m_s"], c, s["n_ri"], timing(cfg),
                                                 cfg["run"]["seed"], _opts(cfg))


def _sim_chain(args):
    cfg, h = args
    m, s = cfg["mac"], cfg["simulate"]
    tm = timing(cfg)
    return h, sim.sf_statistics(h, tm.sf_len(m["bo"]), s["n_sf"], tm, cfg["run"]["seed"], energy(cfg),
                                opts=_opts(cfg))


CHAIN_FIELDS = ("alpha", "beta", "phi", "p_succ", "p_coll", "p_ccas", "p_d", "t_bar", "sigma2")


def _analytic_chain(h, sf_len, tm, ep):
    sol = solve_chain(h, sf_len, tm)
    st = frame_stats(sol, tm)
    ps, pc, pf, pd = event_probabilities(sol, tm)
    return dict(alpha=sol.alpha, beta=sol.beta, phi=sol.phi, p_succ=ps, p_coll=pc, p_ccas=pf, p_d=pd,
                t_bar=st.t_bar, sigma2=st.sigma2, energy=node_energy_sf(h, sf_len, tm, ep) / sf_len)


def cmd_simulate(cfg, out: Path):
    m, s = cfg["mac"], cfg["simulate"]
    tm, ep = timing(cfg), energy(cfg)
    jobs = cfg["run"]["jobs"]
    pr = _pool_map(_sim_pr, [(cfg, m["bo"], p) for p in m["p_values"]], jobs)
    paths = [write_csv(out / "sim_pr.csv", cfg, "simulate", ["bo", "p_s", "pr_empirical"], pr)]
    ch = _pool_map(_sim_chain, [(cfg, h) for h in s["h_values"]], jobs)
    paths.append(write_csv(out / "sim_chain.csv", cfg, "simulate", ["h", *CHAIN_FIELDS, "energy_per_slot"],
                           [(h, *(getattr(st, f) for f in CHAIN_FIELDS), st.energy_per_node_slot) for h, st in ch]))
    rows = []
    c = MacConfig.uniform(m["k_tau"], m["bo"], _best_p(cfg))
    for i in range(s["campaigns"]):
        seed = cfg["run"]["seed"] + i
        f = cfg["field"]
        field = gen_field(f["n_s"], f["n_t"], wind_fraction=f["wind_fraction"], seed=seed, start=f["start"],
                          layout=f["layout"])
        r = sim.run_campaign(field, min(m["m_s"], f["n_s"]), min(s["campaign_m_t"], f["n_t"]), c, tm, seed,
                             ep=ep, opts=_opts(cfg), basis=cfg["calibrate"]["basis"])
        rows.append((seed, len(r.requested), r.frac_sufficient, len(r.deficient), float(np.mean(r.delays)),
                     float(np.mean(r.energy)), float(np.nanmean(r.mse))))
    paths.append(write_csv(out / "campaign.csv", cfg, "simulate",
                           ["seed", "requested", "frac_sufficient", "deficient", "mean_delay", "mean_energy",
                            "mse"], rows))
    return paths


def _best_p(cfg):
    m = cfg["mac"]
    tm = timing(cfg)
    vals = [prob_sufficient(MacConfig.uniform(m["k_tau"], m["bo"], p), m["n_s"], m["m_s"], tm)
            for p in m["p_values"]]
    return float(m["p_values"][int(np.argmax(vals))])


def cmd_compare(cfg, out: Path):
    m, s = cfg["mac"], cfg["simulate"]
    tm, ep = timing(cfg), energy(cfg)
    jobs = cfg["run"]["jobs"]
    pr = _pool_map(_sim_pr, [(cfg, m["bo"], p) for p in m["p_values"]], jobs)
    rows = []
    for bo, p, emp in pr:
        ana = prob_sufficient(MacConfig.uniform(m["k_tau"], bo, p), m["n_s"], m["m_s"], tm)
        rows.append((bo, p, ana, emp, abs(ana - emp)))
    paths = [write_csv(out / "compare_pr.csv", cfg, "compare",
                       ["bo", "p_s", "analytic", "empirical", "abs_gap"], rows)]
    ch = _pool_map(_sim_chain, [(cfg, h) for h in s["h_values"]], jobs)
    rows = []
    sf_len = tm.sf_len(m["bo"])
    for h, st in ch:
        ana = _analytic_chain(h, sf_len, tm, ep)
        for f in CHAIN_FIELDS:
            rows.append((h, f, ana[f], getattr(st, f), abs(ana[f] - getattr(st, f))))
        rows.append((h, "energy_per_slot", ana["energy"], st.energy_per_node_slot,
                     abs(ana["energy"] - st.energy_per_node_slot)))
    paths.append(write_csv(out / "compare_chain.csv", cfg, "compare",
                           ["h", "quantity", "analytic", "simulated", "abs_gap"], rows))
    return paths


COMMANDS = {"generate": cmd_generate, "calibrate": cmd_calibrate, "analyze": cmd_analyze,
            "optimize": cmd_optimize, "simulate": cmd_simulate, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridcsmac", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="TOML scenario file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, e.g. mac.p_suff=0.95 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed, args.jobs)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        for path in COMMANDS[args.command](cfg, args.out):
            print(path)
    except opt.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - reported with scenario context
        print(f"{args.command} failed (config {config_hash(cfg)}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
