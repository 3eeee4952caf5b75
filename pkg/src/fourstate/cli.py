"""Command-line interface: fourstate {keyrate,curve,simulate,reconcile,session}.

Exit codes: 0 success, 2 invalid arguments, 3 no positive key,
4 reconciliation FER above the configured bound, 5 session aborted.
"""
from __future__ import annotations

import argparse
import csv
import sys
import threading
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_NO_KEY, EXIT_FER, EXIT_ABORT = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _range(text: str) -> np.ndarray:
    """'lo:hi[:step]' inclusive, or a single value."""
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi[:step], got {text!r}") from None
    if len(vals) == 1:
        return np.array(vals)
    if len(vals) not in (2, 3) or vals[1] < vals[0]:
        raise argparse.ArgumentTypeError(f"expected lo:hi[:step] with lo <= hi, got {text!r}")
    lo, hi = vals[:2]
    step = vals[2] if len(vals) == 3 else None
    if step is None:
        return np.linspace(lo, hi, 4)
    if step <= 0:
        raise argparse.ArgumentTypeError("step must be positive")
    return lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        port = int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected [host]:port, got {text!r}") from None
    if not 0 <= port < 65536:
        raise argparse.ArgumentTypeError("port out of range")
    return host or "127.0.0.1", port


def _add_channel(p, d=None, xi=None, eta=1.0):
    p.add_argument("--d", type=float, default=d, required=d is None, metavar="KM", help="fiber length in km")
    p.add_argument("--xi", type=float, default=xi, required=xi is None, metavar="SNU",
                   help="excess noise in shot-noise units")
    p.add_argument("--eta", type=float, default=eta, help=f"detector efficiency in (0, 1] (default {eta})")
    p.add_argument("--noise-reference", choices=("input", "output"), default="input",
                   help="where xi is referred: channel input (Bob sees T*xi) or Bob's input (default input)")


def _add_alpha(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float, help="coherent amplitude alpha (mean photon number alpha^2)")
    g.add_argument("--va", type=float, metavar="SNU", help="modulation variance V_A = 2 alpha^2 in shot-noise units")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fourstate", description="Four-state continuous-variable QKD toolkit.")
    ap.add_argument("--config", type=Path, metavar="PATH",
                    help="key = value file supplying defaults for the subcommand's flags "
                         "(for 'session': the shared session configuration)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyrate", help="secret key rate at one operating point")
    _add_channel(p)
    p.add_argument("--beta", type=float, required=True, help="reconciliation efficiency in [0, 1]")
    _add_alpha(p)
    p.add_argument("--optimize-alpha", action="store_true", help="maximise the key rate over alpha")
    p.add_argument("--bracket", type=_float_list, default=[0.05, 1.5], metavar="LO,HI",
                   help="alpha search bracket (default 0.05,1.5)")
    p.add_argument("--normalization", choices=("gaussian", "biawgn"), default="gaussian",
                   help="I(x:y) multiplied by beta (default gaussian capacity)")
    p.add_argument("--csv", type=Path, metavar="PATH", help="also write the report as CSV")

    p = sub.add_parser("curve", help="alpha-optimised key rate versus distance, CSV")
    p.add_argument("--xi", type=_float_list, default=[0.002, 0.004, 0.006, 0.008, 0.01], metavar="SNU,...",
                   help="excess noise values in shot-noise units (default 0.002,...,0.01)")
    p.add_argument("--eta", type=float, default=0.6, help="detector efficiency (default 0.6)")
    p.add_argument("--beta", type=float, default=0.8, help="reconciliation efficiency (default 0.8)")
    p.add_argument("--d", type=_range, default=_range("0:400:5"), metavar="KM[:KM:STEP]",
                   help="distance grid in km, lo:hi:step (default 0:400:5)")
    p.add_argument("--noise-reference", choices=("input", "output"), default="input",
                   help="where xi is referred (default input)")
    p.add_argument("--normalization", choices=("gaussian", "biawgn"), default="gaussian",
                   help="I(x:y) multiplied by beta (default gaussian capacity)")
    p.add_argument("--out", type=Path, metavar="PATH", help="CSV output file (default stdout)")

    p = sub.add_parser("simulate", help="simulate a batch of protocol rounds, CSV")
    p.add_argument("--n", type=int, required=True, help="number of rounds")
    p.add_argument("--seed", type=int, required=True, help="64-bit simulation seed")
    _add_channel(p, d=0.0, xi=0.0)
    _add_alpha(p)
    p.add_argument("--out", type=Path, metavar="PATH", help="CSV output file (default stdout)")

    p = sub.add_parser("reconcile", help="measure reconciliation efficiency and FER")
    p.add_argument("--code", default="peg-3-6-n4096", help="builtin code name or parity-check file")
    p.add_argument("--krep", type=int, default=1, help="repetition factor k_rep (default 1)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--snr", type=_float_list, metavar="S,...", help="per-symbol SNR values (linear)")
    g.add_argument("--snr-sweep", type=_range, metavar="LO:HI[:STEP]",
                   help="per-symbol SNR sweep (linear); without STEP, 4 points")
    p.add_argument("--trials", type=int, default=100, help="frames per SNR point (default 100)")
    p.add_argument("--seed", type=int, default=0, help="64-bit simulation seed (default 0)")
    p.add_argument("--max-iters", type=int, default=200, help="decoder iteration cap (default 200)")
    p.add_argument("--max-fer", type=float, help="exit 4 if any point's FER exceeds this bound")
    p.add_argument("--csv", type=Path, metavar="PATH", help="also write the table as CSV")

    p = sub.add_parser("session", help="run a two-party QKD session")
    p.add_argument("--role", choices=("alice", "bob", "both"), default="both",
                   help="endpoint to run; 'both' runs the pair over an in-process loopback")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--listen", type=_address, metavar="[HOST]:PORT", help="accept the peer on this TCP address")
    g.add_argument("--connect", type=_address, metavar="HOST:PORT", help="connect to the peer at this TCP address")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one session setting (repeatable); see the config file keys")
    p.add_argument("--key-out", type=Path, metavar="PATH",
                   help="write the final key as a 0/1 text line (role 'both': PATH.alice and PATH.bob)")
    p.add_argument("--transcript-out", type=Path, metavar="PATH", help="write the raw message transcript")
    p.add_argument("--timeout", type=float, default=120.0, help="transport timeout in seconds (default 120)")
    return ap


def _apply_config_defaults(ap: argparse.ArgumentParser, argv) -> None:
    """Load --config as subcommand defaults (session configs are handled separately)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    if known.config is None or "session" in rest:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    subs = ap._subparsers._group_actions[0].choices
    if command not in subs:
        return
    sp = subs[command]
    dests = {a.dest: a for a in sp._actions}
    try:
        text = known.config.read_text()
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None
    defaults = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        key = key.replace("-", "_")
        if not sep or key not in dests:
            raise CliError(f"{known.config}:{lineno}: unknown setting {key!r} for '{command}'")
        action = dests[key]
        if action.nargs == 0:
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = action.type(value) if action.type else value
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliError(f"{known.config}:{lineno}: {exc}") from None
        action.required = False
    sp.set_defaults(**defaults)


def _modulation(args):
    from .params import ModulationParams

    if args.alpha is not None:
        return ModulationParams(args.alpha)
    if args.va is not None:
        return ModulationParams.from_variance(args.va)
    return None


def _print_report(rep, out=None):
    out = out or sys.stdout
    print(f"alpha      {rep.alpha_used:.6g}  (mean photons {rep.alpha_used ** 2:.6g})", file=out)
    print(f"snr        {rep.snr:.6g}", file=out)
    print(f"I(x:y)     {rep.i_xy:.6g} bits/symbol", file=out)
    print(f"S(y:E)     {rep.s_ye:.6g} bits/symbol", file=out)
    print(f"beta       {rep.beta:.6g}", file=out)
    print(f"K_real     {rep.k_real:.6g} bits/symbol", file=out)


def cmd_keyrate(args) -> int:
    from .params import ChannelParams
    from .security import NoPositiveKeyError, optimize_alpha, secret_key_rate

    ch = ChannelParams(args.d, args.xi, args.eta, args.noise_reference)
    if not 0 <= args.beta <= 1:
        raise CliError(f"--beta must lie in [0, 1], got {args.beta}")
    mod = _modulation(args)
    if args.optimize_alpha or mod is None:
        if len(args.bracket) != 2 or not 0 < args.bracket[0] <= args.bracket[1]:
            raise CliError("--bracket must be LO,HI with 0 < LO <= HI")
        try:
            _, rep = optimize_alpha(ch, args.beta, tuple(args.bracket), normalization=args.normalization)
        except NoPositiveKeyError as exc:
            print(f"no positive key: {exc}", file=sys.stderr)
            return EXIT_NO_KEY
    else:
        rep = secret_key_rate(mod, ch, args.beta, args.normalization)
    _print_report(rep)
    if args.csv:
        from .security import CurvePoint, curve_csv

        args.csv.write_text(curve_csv([CurvePoint(args.d, args.xi, rep)]))
    if rep.k_real <= 0:
        print("no positive key at this operating point", file=sys.stderr)
        return EXIT_NO_KEY
    return EXIT_OK


def cmd_curve(args) -> int:
    from .params import ChannelParams
    from .security import curve_csv, key_rate_curve

    if not 0 <= args.beta <= 1:
        raise CliError(f"--beta must lie in [0, 1], got {args.beta}")
    if args.d[0] < 0:
        raise CliError("distances must be >= 0 km")
    for xi in args.xi:
        ChannelParams(float(args.d[0]), xi, args.eta, args.noise_reference)
    points = key_rate_curve(args.xi, args.eta, args.beta, args.d, normalization=args.normalization,
                            noise_reference=args.noise_reference)
    text = curve_csv(points)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .channel import estimate_channel, simulate_batch, write_batch_csv
    from .params import ChannelParams

    if args.n < 1:
        raise CliError("--n must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise CliError("--seed must be a 64-bit unsigned integer")
    ch = ChannelParams(args.d, args.xi, args.eta, args.noise_reference)
    mod = _modulation(args)
    if mod is None:
        raise CliError("simulate needs --alpha or --va")
    batch = simulate_batch(args.n, mod, ch, args.seed)
    write_batch_csv(batch, args.out if args.out else sys.stdout)
    msg = f"simulated {args.n} rounds, seed {args.seed}, T={ch.t:.6g}"
    if args.n >= 1000:
        est = estimate_channel(batch.alice_quad, batch.bob_y, args.noise_reference)
        msg += f", t_hat={est.t_hat:.6g}, xi_hat={est.xi_hat:.6g} SNU"
    print(msg, file=sys.stderr)
    return EXIT_OK


def cmd_reconcile(args) -> int:
    from .reconciliation.codes import load_code
    from .reconciliation.scheme import measure_efficiency

    if args.krep < 1 or args.trials < 1 or args.max_iters < 1:
        raise CliError("--krep, --trials and --max-iters must be >= 1")
    snrs = args.snr if args.snr is not None else list(args.snr_sweep)
    if any(s <= 0 for s in snrs):
        raise CliError("SNR values must be positive")
    try:
        code = load_code(args.code)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load code: {exc}") from None
    print(f"code {args.code}: n={code.n} m={code.m_checks} rate={code.rate:.4f}, k_rep={args.krep}")
    header = ("snr", "k_rep", "beta_measured", "beta_predicted", "fer", "trials", "mean_iters")
    rows = []
    print("{:>10} {:>5} {:>13} {:>14} {:>7} {:>6} {:>10}".format(*header))
    for s in snrs:
        r = measure_efficiency(code, args.krep, float(s), args.trials, args.seed, args.max_iters)
        row = (r.snr, r.k_rep, r.beta_measured, r.beta_predicted, r.fer, r.trials, r.mean_iters)
        rows.append(row)
        print(f"{r.snr:>10.5g} {r.k_rep:>5d} {r.beta_measured:>13.4f} {r.beta_predicted:>14.4f} "
              f"{r.fer:>7.3f} {r.trials:>6d} {r.mean_iters:>10.1f}", flush=True)
    if args.csv:
        with args.csv.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    if args.max_fer is not None and any(r[4] > args.max_fer for r in rows):
        print(f"FER above bound {args.max_fer}", file=sys.stderr)
        return EXIT_FER
    return EXIT_OK


def _session_config(args):
    from .protocol.config import SessionConfig

    try:
        text = args.config.read_text() if args.config else ""
        text += "\n" + "\n".join(args.set)
        return SessionConfig.from_text(text)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None


def _write_key(path: Path, key) -> None:
    path.write_text("".join(map(str, key.tolist())) + "\n")


def _summarise(res) -> None:
    if res.aborted:
        print(f"{res.role}: aborted ({res.reason.name}) {res.detail}", file=sys.stderr)
        return
    rep = res.report
    print(f"{res.role}: key {len(res.key)} bits from {res.n_key_symbols} key symbols in {res.frames} frame(s); "
          f"beta={res.beta_measured:.4f}, K_real={rep.k_real:.4g} bits/symbol, leaked {res.leakage_bits} bits; "
          f"transcript sha256 {res.transcript_digest}")


def cmd_session(args) -> int:
    from .protocol.session import run_pair, run_session
    from .protocol.wire import LoopbackTransport, TcpTransport

    cfg = _session_config(args)
    if args.role == "both":
        if args.listen or args.connect:
            pair = _tcp_pair(args.timeout)
        else:
            pair = LoopbackTransport.pair(args.timeout)
        res = run_pair(cfg, transports=pair)
        results = [res.alice, res.bob]
    else:
        if args.listen:
            transport = TcpTransport.listen(*args.listen, timeout=args.timeout)
        elif args.connect:
            transport = TcpTransport.connect(*args.connect, timeout=args.timeout)
        else:
            raise CliError("a single role needs --listen or --connect")
        try:
            results = [run_session(args.role, transport, cfg)]
        finally:
            transport.close()
    for r in results:
        _summarise(r)
        if args.key_out and not r.aborted:
            _write_key(args.key_out if len(results) == 1 else args.key_out.with_name(f"{args.key_out.name}.{r.role}"),
                       r.key)
    if args.transcript_out:
        args.transcript_out.write_bytes(results[0].transcript)
    return EXIT_ABORT if any(r.aborted for r in results) else EXIT_OK


def _tcp_pair(timeout):
    from .protocol.wire import TcpTransport

    box, ready = {}, threading.Event()

    def serve():
        box["server"] = TcpTransport.listen("127.0.0.1", 0, timeout, ready=lambda p: (box.update(port=p), ready.set()))

    th = threading.Thread(target=serve, daemon=True)
    th.start()
    ready.wait(timeout)
    client = TcpTransport.connect("127.0.0.1", box["port"], timeout)
    th.join(timeout)
    return box["server"], client


COMMANDS = {
    "keyrate": cmd_keyrate,
    "curve": cmd_curve,
    "simulate": cmd_simulate,
    "reconcile": cmd_reconcile,
    "session": cmd_session,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        _apply_config_defaults(ap, argv)
        args = ap.parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
