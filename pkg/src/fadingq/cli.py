"""Command-line front end: ``fadingq analytic | sweep | simulate | verify``.

Exit codes: 0 success, 1 verification failure, 2 invalid parameters, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import re
import sys
import tempfile
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import analytic as an
from .channel import ChannelParams, db_to_watts, derive_params
from .exceptions import ConfigurationError, DomainError, UnstableLoadError
from .sim import SimConfig, replicate, run
from .verify import FAULTS, format_table, run_checks

EXIT_OK, EXIT_VERIFY, EXIT_PARAMS, EXIT_IO = 0, 1, 2, 3

MANIFEST_NAME = "manifest.json"
DELAY_HEADER = ["theta", "E_T", "E_W", "E_V", "E_D"]
PI_HEADER = ["k", "pi_k", "ln_pi_k"]
HIST_HEADER = ["value", "count"]


class ParamError(Exception):
    pass


# -- parsing helpers --------------------------------------------------------

def _count(text):
    v = float(text)
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return int(v)


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


_POWER_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(dBW|dBm|W|mW)\s*$")


def parse_power(text):
    """Power with an explicit unit suffix (dBW, dBm, W, mW) -> watts."""
    m = _POWER_RE.match(text)
    if not m:
        raise argparse.ArgumentTypeError(
            f"power needs a unit suffix (dBW, dBm, W, mW), got {text!r}"
        )
    value, unit = float(m.group(1)), m.group(2)
    if unit == "dBW":
        return db_to_watts(value)
    if unit == "dBm":
        return db_to_watts(value - 30.0)
    return value if unit == "W" else value * 1e-3


def read_config_file(path):
    """key=value lines (``#`` comments) -> list of ``--key value`` tokens."""
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParamError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "yes", "on"):
                tokens.append(flag)
            else:
                tokens.extend([flag, value])
    return tokens


def _add_load_flags(p):
    g = p.add_argument_group("load (give --theta, or channel + rate)")
    g.add_argument("--theta", type=float, help="load theta = Lp / nu")
    g.add_argument("--bandwidth", type=float, help="W in Hz")
    g.add_argument("--block", type=float, help="block length TB in s")
    g.add_argument("--rate", type=float, help="traffic rate R in nats/s")
    g.add_argument("--rho", type=float, help="average received SNR")
    g.add_argument("--power", type=parse_power, help="transmit power with unit, e.g. -10dBW")
    g.add_argument("--noise-psd", type=float, help="N0 in W/Hz")
    g.add_argument("--distance", type=float, help="d in m")
    g.add_argument("--alpha", type=float, help="path loss exponent")
    g.add_argument("--sigma2", type=float, default=1.0, help="Rayleigh component variance")


def resolve_load(args):
    """Reduce the CLI load flags to (theta, channel, traffic)."""
    physical = [args.power, args.noise_psd, args.distance, args.alpha]
    uses_channel = args.bandwidth is not None or args.block is not None or args.rate is not None
    if args.theta is not None and not uses_channel:
        return args.theta, None, None
    if args.theta is not None and uses_channel:
        raise ParamError("give either --theta or the channel/rate flags, not both")
    if args.bandwidth is None or args.block is None or args.rate is None:
        raise ParamError("need --theta, or --bandwidth, --block and --rate with --rho or the physical set")
    try:
        if all(v is not None for v in physical):
            channel = ChannelParams(bandwidth=args.bandwidth, block_length=args.block,
                                    rho=args.rho, tx_power=args.power, noise_psd=args.noise_psd,
                                    distance=args.distance, pathloss_exponent=args.alpha,
                                    rayleigh_sigma2=args.sigma2)
        elif any(v is not None for v in physical):
            raise ParamError("physical SNR needs --power, --noise-psd, --distance and --alpha")
        else:
            channel = ChannelParams(bandwidth=args.bandwidth, block_length=args.block, rho=args.rho)
        traffic = derive_params(channel, args.rate)
    except ConfigurationError as e:
        raise ParamError(str(e))
    return traffic.theta, channel, traffic


def _resolved_load_dict(theta, channel, traffic):
    d = {"theta": theta}
    if channel is not None:
        d.update(bandwidth_hz=channel.bandwidth, block_length_s=channel.block_length,
                 rho=channel.rho, nu_nats=channel.nu, awgn_capacity_nats_per_s=channel.awgn_capacity)
        if channel.has_physical:
            d.update(tx_power_w=channel.tx_power, noise_psd_w_per_hz=channel.noise_psd,
                     distance_m=channel.distance, pathloss_exponent=channel.pathloss_exponent,
                     rayleigh_sigma2=channel.rayleigh_sigma2)
    if traffic is not None:
        d.update(rate_nats_per_s=traffic.rate, packet_size_nats=traffic.packet_size)
    return d


# -- output ----------------------------------------------------------------

def run_id(subcommand, params):
    blob = json.dumps({"cmd": subcommand, "params": params, "version": __version__},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows, rid):
    buf = io.StringIO()
    buf.write(f"# run_id={rid} manifest={MANIFEST_NAME}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_manifest(out_dir, subcommand, params, outputs, rid, seeds=()):
    manifest = {
        "subcommand": subcommand,
        "run_id": rid,
        "parameters": params,
        "seeds": list(seeds),
        "outputs": sorted(outputs),
        "tool": "fadingq",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    atomic_write(os.path.join(out_dir, MANIFEST_NAME), json.dumps(manifest, indent=2) + "\n")


# -- subcommands -----------------------------------------------------------

def analytic_report(theta, tail_tol=1e-10):
    """Analytic quantities, each tagged with the formula it comes from."""
    dist = an.stationary_distribution(theta, tail_tol)
    bd = an.mean_delay(theta)
    zstar = an.singularity(theta)

    def q(value, formula):
        return {"value": value, "formula": formula}

    return {
        "pi": q(dist.pi.tolist(), "pi_k = phi_{k-1} - phi_k, phi_k = (1-theta) sum_j (j theta)^(k+j) e^(-j theta)/(k+j)!"),
        "truncation_N": q(dist.truncation_N, "smallest N with geometric tail certificate below tail_tol"),
        "tail_mass_bound": q(dist.tail_mass_bound, "phi_N + series remainder"),
        "mean_queue": q(an.mean_queue_length(theta), "E[L] = theta(2-theta)/(2(1-theta))"),
        "singularity_zstar": q(zstar, "z* = -W_{-1}(-theta e^-theta)/theta"),
        "decay_rate": q(1.0 / zstar, "pi_{k+1}/pi_k -> 1/z*"),
        "E_T": q(bd.mean_service, "E[T] = theta"),
        "E_W": q(bd.mean_wait, "E[W] = E[L] - E[T]"),
        "E_V": q(bd.mean_vestige, "E[V] = 1/2 + int_0^1 (x-1) e^(-theta/x) dx"),
        "E_D": q(bd.mean_delay, "E[D] = 1/2 + theta + theta^2/(2(1-theta)) + int_0^1 (x-1) e^(-theta/x) dx"),
    }


def cmd_analytic(args):
    theta, channel, traffic = resolve_load(args)
    an.check_theta(theta)
    params = {**_resolved_load_dict(theta, channel, traffic), "tail_tol": args.tail_tol}
    rid = run_id("analytic", params)
    doc = {
        "run_id": rid,
        "parameters": params,
        "quantities": analytic_report(theta, args.tail_tol),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        atomic_write(args.out, text)
        write_manifest(os.path.dirname(os.path.abspath(args.out)), "analytic", params,
                       [os.path.basename(args.out)], rid)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _theta_tag(theta):
    return f"{theta:g}"


def cmd_sweep(args):
    if not (0 < args.theta_min < args.theta_max < 1):
        raise ParamError("need 0 < theta_min < theta_max < 1")
    if args.points < 2:
        raise ParamError("need --points >= 2")
    quantities = set(args.quantities.split(","))
    if not quantities <= {"delay", "pi"}:
        raise ParamError("--quantities takes delay and/or pi")
    for t in args.pi_thetas:
        an.check_theta(t)
    params = {"theta_min": args.theta_min, "theta_max": args.theta_max, "points": args.points,
              "quantities": sorted(quantities), "pi_thetas": args.pi_thetas, "tail_tol": args.tail_tol}
    rid = run_id("sweep", params)
    outputs = []
    if "delay" in quantities:
        rows = []
        for theta in np.linspace(args.theta_min, args.theta_max, args.points):
            bd = an.mean_delay(float(theta))
            rows.append((bd.theta, bd.mean_service, bd.mean_wait, bd.mean_vestige, bd.mean_delay))
        atomic_write(os.path.join(args.out_dir, "delay_vs_theta.csv"), csv_text(DELAY_HEADER, rows, rid))
        outputs.append("delay_vs_theta.csv")
    if "pi" in quantities:
        for theta in args.pi_thetas:
            dist = an.stationary_distribution(theta, args.tail_tol)
            rows = [(k, p, float(np.log(p)) if p > 0 else float("-inf")) for k, p in enumerate(dist.pi)]
            name = f"pi_vs_k_theta{_theta_tag(theta)}.csv"
            atomic_write(os.path.join(args.out_dir, name), csv_text(PI_HEADER, rows, rid))
            outputs.append(name)
    write_manifest(args.out_dir, "sweep", params, outputs, rid)
    for o in outputs:
        print(os.path.join(args.out_dir, o))
    return EXIT_OK


def cmd_simulate(args):
    theta, channel, traffic = resolve_load(args)
    if args.capacity == "exact" and channel is None and args.rho is None:
        raise ParamError("--capacity exact needs --rho (or a channel)")
    try:
        config = SimConfig(theta=theta if traffic is None else None, engine=args.engine,
                           capacity_mode=args.capacity, num_blocks=args.blocks,
                           warmup_blocks=args.warmup, seed=args.seed,
                           replications=args.replications,
                           rho=args.rho if channel is None else None,
                           channel=channel, traffic=traffic)
    except ConfigurationError as e:
        raise ParamError(str(e))
    params = {**_resolved_load_dict(theta, channel, traffic), **config.echo()}
    params.pop("channel", None)
    params.pop("traffic", None)
    rid = run_id("simulate", params)
    seeds = [args.seed + r for r in range(args.replications)]
    outputs = []
    ref = {"file": MANIFEST_NAME, "run_id": rid}
    if args.replications > 1:
        summary = replicate(config, workers=args.workers)
        doc = {"manifest": ref, **summary.to_dict()}
        hists = {"queue_departure": summary.queue_length_histogram_departure,
                 "queue_boundary": summary.queue_length_histogram_boundary}
    else:
        stats = run(config)
        doc = {"manifest": ref, **stats.to_dict(include_samples=args.samples)}
        hists = {"queue_departure": stats.queue_length_histogram_departure,
                 "queue_boundary": stats.queue_length_histogram_boundary,
                 "service_time": stats.service_time_histogram}
        if stats.metadata.get("unstable"):
            print("warning: theta >= 1, the simulated queue is unstable", file=sys.stderr)
    atomic_write(os.path.join(args.out_dir, "sim_stats.json"), json.dumps(doc, indent=2) + "\n")
    outputs.append("sim_stats.json")
    for name, h in hists.items():
        fname = f"hist_{name}.csv"
        rows = [(v, int(c)) for v, c in enumerate(h) if c]
        atomic_write(os.path.join(args.out_dir, fname), csv_text(HIST_HEADER, rows, rid))
        outputs.append(fname)
    write_manifest(args.out_dir, "simulate", params, outputs, rid, seeds)
    metrics = doc.get("metrics") or {k: v["mean"] for k, v in doc["summary"].items()}
    print(json.dumps({"run_id": rid, **{k: metrics[k] for k in
                      ("mean_delay", "mean_queue_departure", "p_empty_departure") if k in metrics}}))
    return EXIT_OK


def cmd_verify(args):
    for t in args.thetas:
        an.check_theta(t)
    start = time.perf_counter()
    checks = run_checks(thetas=tuple(args.thetas), num_blocks=args.blocks, seed=args.seed,
                        fault=args.inject_fault)
    elapsed = time.perf_counter() - start
    print(format_table(checks))
    failed = sum(not c.passed for c in checks)
    print(f"\n{len(checks) - failed}/{len(checks)} checks passed in {elapsed:.1f} s")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser():
    parser = argparse.ArgumentParser(prog="fadingq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fadingq {__version__}")
    parser.add_argument("--config", help="key=value file; command-line flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="stationary law, decay rate and delay breakdown")
    _add_load_flags(p)
    p.add_argument("--tail-tol", type=float, default=1e-10)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("sweep", help="delay vs theta and pi vs k as CSV")
    p.add_argument("--theta-min", type=float, default=0.05)
    p.add_argument("--theta-max", type=float, default=0.95)
    p.add_argument("--points", type=_count, default=91)
    p.add_argument("--quantities", default="delay,pi")
    p.add_argument("--pi-thetas", type=_float_list, default=[0.2, 0.5, 0.8])
    p.add_argument("--tail-tol", type=float, default=1e-12)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo block simulation")
    _add_load_flags(p)
    p.add_argument("--engine", choices=("continuous", "discrete"), default="continuous")
    p.add_argument("--capacity", choices=("low_snr", "exact"), default="low_snr")
    p.add_argument("--blocks", type=_count, default=1_000_000)
    p.add_argument("--warmup", type=_count, default=None)
    p.add_argument("--seed", type=_count, default=0)
    p.add_argument("--replications", type=_count, default=1)
    p.add_argument("--workers", type=_count, default=1)
    p.add_argument("--samples", action="store_true", help="include per-packet samples in the JSON")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the oracle-agreement suite")
    p.add_argument("--thetas", type=_float_list, default=[0.2, 0.5, 0.8])
    p.add_argument("--blocks", type=_count, default=1_000_000)
    p.add_argument("--seed", type=_count, default=20240601)
    p.add_argument("--inject-fault", choices=FAULTS, default=None,
                   help="test hook: corrupt the series (pi_k = phi_{k-1} + phi_k)")
    p.set_defaults(func=cmd_verify)
    return parser


def _splice_config(argv):
    """Insert config-file tokens right after the subcommand so flags win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ParamError("--config needs a path")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2:]
    tokens = read_config_file(path)
    cmds = {"analytic", "sweep", "simulate", "verify"}
    for j, tok in enumerate(rest):
        if tok in cmds:
            return rest[: j + 1] + tokens + rest[j + 1:]
    raise ParamError("no subcommand given")


def _join_power_value(argv):
    # "--power -10dBW" would otherwise be read as an unknown option
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--power":
            val = next(it, None)
            out.append(tok if val is None else f"--power={val}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    argv = _join_power_value(list(sys.argv[1:] if argv is None else argv))
    try:
        argv = _splice_config(argv)
    except ParamError as e:
        print(f"fadingq: error: {e}", file=sys.stderr)
        return EXIT_PARAMS
    except OSError as e:
        print(f"fadingq: cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UnstableLoadError as e:
        print(f"fadingq: unstable load: {e}", file=sys.stderr)
        return EXIT_PARAMS
    except (ParamError, DomainError, ConfigurationError) as e:
        print(f"fadingq: invalid parameters: {e}", file=sys.stderr)
        return EXIT_PARAMS
    except OSError as e:
        print(f"fadingq: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
