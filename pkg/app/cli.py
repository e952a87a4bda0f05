"""
IDPS command line

    idps gen       --seed N --duration S --out F [--attacks list] [--config F] [--window W]
    idps train     --in F --window W --profile F
    idps detect    --in F --rules F --profile F [--mode M] [--tau X] --alerts F
                   [--promoted F] [--dump-blocks F] [--notify EMAIL]
    idps evaluate  --alerts F --truth F --window W [--report F]
    idps rules validate F
    idps rules default [--out F]
    idps serve     --rules F --profile F [--mode M] [--port P]
    idps replay    --in F [--url U] [--batch N]

Exit codes: 0 ok, 1 usage error, 2 input error, 3 I/O error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

# Load env before importing config
load_dotenv()

import httpx

from app.config import settings
from app.errors import ScenarioError
from app.pipeline.anomaly import read_profile, save_profile, train
from app.pipeline.events import TraceReader, event_to_dict, load_trace, write_trace
from app.pipeline.orchestrator import IDPSPipeline, Mode, PipelineConfig
from app.pipeline.rules import load_ruleset, serialize_ruleset
from app.services.evaluation import evaluate
from app.services.formatter import (
    header_record, read_alert_stream, render_detect_summary, render_report,
    summary_record, write_alert_stream, write_block_dump,
)
from app.services.notify import send_alert_digest
from app.services.simulator import (
    AttackKind, default_attacks, default_ruleset, default_scenario, generate, load_scenario,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so main() owns the exit code."""

    def error(self, message: str):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _attack_list(value: str) -> list[str]:
    if value in ("all", ""):
        return [k.value for k in AttackKind]
    if value == "none":
        return []
    kinds = [k.strip() for k in value.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in {a.value for a in AttackKind}]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown attack kind(s): {', '.join(unknown)} (choose from {', '.join(AttackKind)})"
        )
    return kinds


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_gen(args) -> int:
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ScenarioError(f"malformed scenario config: {e.msg}") from None
        if not isinstance(data, dict):
            raise ScenarioError("malformed scenario config: expected a JSON object")
        if args.seed is not None:
            data["seed"] = args.seed
        if args.duration is not None:
            data["duration_s"] = args.duration
        if args.window is not None:
            data["window_s"] = args.window
        data.setdefault("window_s", settings.window_s)
        if args.attacks is not None and "attacks" not in data:
            base = load_scenario(data)
            data["attacks"] = [a.model_dump() for a in default_attacks(base, args.attacks)]
        cfg = load_scenario(data)
    else:
        seed = 42 if args.seed is None else args.seed
        duration = 600.0 if args.duration is None else args.duration
        window = settings.window_s if args.window is None else args.window
        cfg = default_scenario(seed, duration, args.attacks, window_s=window)

    events = generate(cfg)
    count = write_trace(events, args.out)
    print(f"wrote {count} events to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    events, digest = load_trace(args.input)
    window = args.window if args.window is not None else settings.window_s
    profile = train(events, window, trace_digest=digest)
    Path(args.profile).write_text(save_profile(profile), encoding="utf-8")
    print(f"trained on {profile.n} windows (W={window:g}s) -> {args.profile}")
    return EXIT_OK


def cmd_detect(args) -> int:
    rules = load_ruleset(args.rules)
    profile = read_profile(args.profile)
    config = PipelineConfig.from_settings(
        settings,
        mode=args.mode,
        tau=args.tau,
        window_s=args.window if args.window is not None else profile.window_s,
    )
    pipeline = IDPSPipeline(rules, profile, config)
    with open(args.input, "r", encoding="utf-8") as f:
        reader = TraceReader(f)
        for e in reader:
            pipeline.process_event(e)
    pipeline.flush()

    write_alert_stream(
        args.alerts,
        header_record(pipeline, reader.hexdigest),
        pipeline.alerts,
        summary_record(pipeline),
    )
    if args.promoted:
        Path(args.promoted).write_text(serialize_ruleset(pipeline.state.promoted_rules), encoding="utf-8")
        logger.info(f"[cli] Wrote {len(pipeline.state.promoted_rules)} promoted rules to {args.promoted}")
    if args.dump_blocks:
        write_block_dump(args.dump_blocks, pipeline.state.blocks)
    if args.notify:
        send_alert_digest(args.notify, pipeline.alerts, source=Path(args.input).name)

    sys.stdout.write(render_detect_summary(pipeline))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth, digest = load_trace(args.truth)
    records = read_alert_stream(args.alerts)
    window = args.window if args.window is not None else settings.window_s
    report = evaluate(records, truth, window, truth_digest=digest)
    sys.stdout.write(render_report(report))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_rules_validate(args) -> int:
    rules = load_ruleset(args.file)
    print(f"{args.file}: {len(rules)} rules OK")
    return EXIT_OK


def cmd_rules_default(args) -> int:
    text = default_ruleset()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    settings.rules_path = args.rules
    settings.profile_path = args.profile
    if args.mode:
        settings.mode = args.mode
    if args.tau is not None:
        settings.tau = args.tau
    # the app loads rules and profile on startup; fail fast here instead
    load_ruleset(args.rules)
    read_profile(args.profile)
    uvicorn.run("app.main:app", host=args.host, port=args.port or settings.port)
    return EXIT_OK


def cmd_replay(args) -> int:
    sent = blocked = 0
    with open(args.input, "r", encoding="utf-8") as f, httpx.Client(base_url=args.url, timeout=30.0) as client:
        batch: list[dict] = []

        def post(batch: list[dict]) -> None:
            nonlocal sent, blocked
            r = client.post("/api/events", json=batch)
            r.raise_for_status()
            verdicts = r.json()["verdicts"]
            sent += len(batch)
            blocked += sum(1 for v in verdicts if v["verdict"] == "blocked")

        for e in TraceReader(f):
            batch.append(event_to_dict(e))
            if len(batch) >= args.batch:
                post(batch)
                batch = []
        if batch:
            post(batch)
        if not args.no_flush:
            client.post("/api/flush").raise_for_status()
        alerts = client.get("/api/alerts").json()["alerts"]
    print(f"replayed {sent} events to {args.url}: {blocked} blocked, {len(alerts)} alerts")
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> _Parser:
    parser = _Parser(prog="idps", description="Integrated intrusion detection and prevention for IaaS clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled trace")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--window", type=float, help="window the scan and bruteforce attacks must fit in")
    p.add_argument("--out", required=True)
    p.add_argument("--attacks", type=_attack_list, help="comma list of scan,bruteforce,exploit,exfil; all; none")
    p.add_argument("--config", help="scenario JSON file")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="learn a normal-behavior profile")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", type=float)
    p.add_argument("--profile", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run detection and prevention over a trace")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--tau", type=float)
    p.add_argument("--window", type=float, help="defaults to the profile's window")
    p.add_argument("--alerts", required=True)
    p.add_argument("--promoted")
    p.add_argument("--dump-blocks", dest="dump_blocks")
    p.add_argument("--notify", metavar="EMAIL")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score alerts against ground truth")
    p.add_argument("--alerts", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--window", type=float)
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rules", help="rule file tools")
    rules_sub = p.add_subparsers(dest="rules_command", required=True)
    v = rules_sub.add_parser("validate", help="parse a rules file")
    v.add_argument("file")
    v.set_defaults(func=cmd_rules_validate)
    d = rules_sub.add_parser("default", help="write the shipped known-attack ruleset")
    d.add_argument("--out")
    d.set_defaults(func=cmd_rules_default)

    p = sub.add_parser("serve", help="run the sensor-ingest HTTP service")
    p.add_argument("--rules", default=settings.rules_path or None, required=not settings.rules_path)
    p.add_argument("--profile", default=settings.profile_path or None, required=not settings.profile_path)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--tau", type=float)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="stream a trace to a running ingest service")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--url", default=f"http://127.0.0.1:{settings.port}")
    p.add_argument("--batch", type=int, default=500)
    p.add_argument("--no-flush", action="store_true")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except ValueError as e:
        # InputError and its subclasses
        print(f"idps: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, httpx.HTTPError) as e:
        print(f"idps: error: {e}", file=sys.stderr)
        return EXIT_IO
