"""``boscwatch`` command line.

Settings resolve as command-line flag, then ``BOSCWATCH_<KEY>`` environment
variable, then the ``key=value`` config file given with ``--config``.

Exit status: 0 clean, 1 anomaly detected, 2 input error, 3 configuration
error.
"""

import argparse
import logging
import os
import signal
import sys
import threading

from boscwatch import evaluator, synth
from boscwatch.db import NormalBehaviorDb
from boscwatch.detector import Detector, DetectorConfig, train
from boscwatch.errors import BoscwatchError, ConfigError, InputError
from boscwatch.monitor import CommandEventSource, MonitorConfig, SessionManager, pipelined
from boscwatch.strace import iter_events, open_stream
from boscwatch.syscall_index import IndexMap, build_census, build_index

log = logging.getLogger("boscwatch")

EXIT_CLEAN = 0
EXIT_ANOMALY = 1
EXIT_INPUT = 2
EXIT_CONFIG = 3

ENV_PREFIX = "BOSCWATCH_"


def read_config_file(path):
    """Flat ``key=value`` lines; ``#`` starts a comment line."""
    values = {}
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    with f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            values[key.strip().lower().replace("-", "_")] = value.strip()
    return values


class Settings:
    def __init__(self, args, environ=None):
        self.args = args
        self.environ = os.environ if environ is None else environ
        self.file = read_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, key, default=None, conv=str):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        raw = self.environ.get(ENV_PREFIX + key.upper())
        if raw is None:
            raw = self.file.get(key.lower())
        if raw is None:
            return default
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None

    def require(self, key, conv=str):
        value = self.get(key, conv=conv)
        if value is None:
            raise ConfigError(f"missing required setting {key!r} "
                              f"(flag, {ENV_PREFIX}{key.upper()}, or config file)")
        return value


def _bool(raw):
    if isinstance(raw, bool):
        return raw
    lowered = str(raw).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def detector_config(settings, train_events=None):
    return DetectorConfig(
        k=settings.get("k", 10, int),
        epoch_size=settings.get("S", 1000, int),
        threshold=settings.get("Td", 10, int),
        train_events=train_events,
        continuous_training=settings.get("continuous", True, _bool),
    )


def cmd_build_index(args, settings):
    trace = settings.require("trace")
    census = build_census(iter_events(open_stream(trace)))
    index_map = build_index(census)
    index_map.save(settings.require("out"))
    log.info("%d distinct syscalls, %d retained, vector length %d",
             census.distinct, index_map.n_retained, index_map.vector_len)
    return EXIT_CLEAN


def cmd_train(args, settings):
    index_map = IndexMap.load(settings.require("index"))
    config = detector_config(settings, settings.require("events", int))
    db = train(open_stream(settings.require("trace")), config, index_map)
    db.save(settings.require("out"))
    log.info("trained on %d events: %d distinct bags", config.train_events, len(db))
    return EXIT_CLEAN


def cmd_detect(args, settings):
    config = detector_config(settings)
    index_map = IndexMap.load(settings.require("index"))
    db = NormalBehaviorDb.load(settings.require("db"))
    detector = Detector(db, index_map, config)
    if args.follow:
        stream = open_stream(args.follow, "online",
                             poll_interval=settings.get("poll_interval", 0.05, float),
                             wait=settings.get("wait", 10.0, float))
        _stop_on_signals(stream.stop)
        items = pipelined(stream)
    else:
        items = open_stream(settings.require("trace"))
    out = sys.stdout
    anomalous = False
    for verdict in detector.run(items):
        out.write(verdict.to_line() + "\n")
        out.flush()
        anomalous |= verdict.anomalous
    save_db = settings.get("save_db")
    if save_db:
        db.save(save_db)
    return EXIT_ANOMALY if anomalous else EXIT_CLEAN


def _stop_on_signals(event):
    if threading.current_thread() is not threading.main_thread():
        return

    def handler(signum, frame):
        event.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)


def _int_list(text):
    """``1000,2000`` or an inclusive range ``1000:10000:500``."""
    text = str(text)
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] < 1:
            raise ValueError(text)
        return tuple(range(parts[0], parts[1] + 1, parts[2]))
    return tuple(int(p) for p in text.split(",") if p.strip())


def cmd_eval_sweep(args, settings):
    grid = evaluator.SweepGrid(settings.get("S_grid", evaluator.SweepGrid.epoch_sizes, _int_list),
                               settings.get("Td_grid", evaluator.SweepGrid.thresholds, _int_list))
    index_path = settings.get("index")
    rows = evaluator.sweep(
        open_stream(settings.require("trace")),
        settings.require("train_events", int),
        grid,
        k=settings.get("k", 10, int),
        index_map=IndexMap.load(index_path) if index_path else None,
        continuous_training=settings.get("continuous", True, _bool),
    )
    text = evaluator.rows_to_csv(rows)
    out = settings.get("out")
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_CLEAN


def _attack(text):
    try:
        variant, length, position = text.split(":")
        return synth.AttackModel(variant, int(length), int(position))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected variant:length:position, got {text!r}") from None


def cmd_gen_synth(args, settings):
    if args.spec:
        workload, attacks, total = synth.load_spec(args.spec)
    else:
        workload = synth.default_workload(seed=args.seed, noise=args.noise)
        attacks = args.attack or []
        total = args.events
        if total is None:
            raise ConfigError("--events is required without --spec")
    synth.generate(workload, attacks, total, path=settings.require("out"))
    return EXIT_CLEAN


def cmd_watch(args, settings):
    mconf = MonitorConfig(
        events_command=settings.get("events_command", MonitorConfig.events_command),
        cgroup_root=settings.get("cgroup_root", MonitorConfig.cgroup_root),
        tracer_template=settings.get("tracer_template", MonitorConfig.tracer_template),
        trace_dir=settings.get("trace_dir", MonitorConfig.trace_dir),
    )
    index_map = IndexMap.load(settings.require("index"))
    db = NormalBehaviorDb.load(settings.require("db"))
    config = detector_config(settings)
    lock = threading.Lock()

    def on_verdict(cid, verdict):
        with lock:
            sys.stdout.write(f"{cid},{verdict.to_line()}\n")
            sys.stdout.flush()

    manager = SessionManager(mconf, db, index_map, config, on_verdict=on_verdict)
    source = CommandEventSource(mconf.events_command)
    try:
        manager.run(source)
    except KeyboardInterrupt:
        source.close()
    return EXIT_CLEAN


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("-v", "--verbose", action="count", default=0)

    detect_opts = argparse.ArgumentParser(add_help=False)
    detect_opts.add_argument("--k", type=int, help="window size (default 10)")
    detect_opts.add_argument("--S", type=int, help="epoch size in syscalls (default 1000)")
    detect_opts.add_argument("--Td", type=int, help="mismatch threshold (default 10)")
    detect_opts.add_argument("--no-continuous", dest="continuous", action="store_const",
                             const=False, default=None,
                             help="never commit clean epochs into the database")

    p = argparse.ArgumentParser(prog="boscwatch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-index", parents=[common], help="census a clean trace")
    s.add_argument("--trace")
    s.add_argument("--out")
    s.set_defaults(func=cmd_build_index)

    s = sub.add_parser("train", parents=[common, detect_opts], help="build the database")
    s.add_argument("--trace")
    s.add_argument("--index")
    s.add_argument("--events", type=int, help="number of syscalls to train on")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", parents=[common, detect_opts], help="score epochs")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--trace", help="complete trace file")
    src.add_argument("--follow", metavar="TRACE", help="trace file still being written")
    s.add_argument("--index")
    s.add_argument("--db")
    s.add_argument("--save-db", dest="save_db", help="write the updated database here")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval-sweep", parents=[common, detect_opts], help="TPR/FPR grid")
    s.add_argument("--trace")
    s.add_argument("--train-events", dest="train_events", type=int)
    s.add_argument("--index", help="index file (default: built from the training prefix)")
    s.add_argument("--S-grid", dest="S_grid", type=_int_list,
                   help="epoch sizes, list or start:stop:step (default 1000:10000:500)")
    s.add_argument("--Td-grid", dest="Td_grid", type=_int_list,
                   help="thresholds, list or start:stop:step (default 10:100:10)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_sweep)

    s = sub.add_parser("gen-synth", parents=[common], help="write a synthetic trace")
    s.add_argument("--spec", help="JSON generator spec")
    s.add_argument("--events", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--attack", type=_attack, action="append",
                   help="variant:length:position, repeatable")
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("watch", parents=[common, detect_opts],
                       help="trace new containers and detect online")
    s.add_argument("--index")
    s.add_argument("--db")
    s.set_defaults(func=cmd_watch)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args, Settings(args))
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except (InputError, OSError) as e:
        log.error("%s", e)
        return EXIT_INPUT
    except BoscwatchError as e:
        log.error("%s", e)
        return getattr(e, "exit_status", EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
