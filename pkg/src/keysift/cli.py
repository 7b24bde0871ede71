"""Pipeline orchestration and the command-line interface.

Exit codes are stable: 0 for a validated decrypt, 2 when analysis completed
but nothing decrypted, 1 for operational errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .capture import CaptureFormat, NonceStyle, explicit_nonce_style, parse_capture
from .decrypt import (
    DecryptedSession,
    TrialResult,
    decrypt_session,
    trial_decrypt,
    trial_decrypt_blocks,
)
from .errors import KeysiftError, NoCandidates, NoValidDecrypt
from .fixtures import FixtureSpec, generate_fixture, spec_from_json
from .memscan import (
    ScanConfig,
    entropy_profile,
    load_extracts,
    pair_candidates,
    scan_standard,
    scan_windows,
)
from .report import entropy_profile_csv, render_json, render_text

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_DECRYPT = 2

MODES = ("auto", "windows", "standard")


@dataclass
class RunReport:
    mode_requested: str
    mode_used: str | None
    nonce_style: str
    candidates: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outcome: str = "no_valid_decrypt"
    trials: dict | None = None
    material: dict | None = None
    session: dict | None = None

    def to_dict(self) -> dict:
        return {
            "mode_requested": self.mode_requested,
            "mode_used": self.mode_used,
            "nonce_style": self.nonce_style,
            "candidates": self.candidates,
            "timings": self.timings,
            "outcome": self.outcome,
            "trials": self.trials,
            "material": self.material,
            "session": self.session,
        }


def _session_dict(session: DecryptedSession) -> dict:
    return {
        "partial": session.partial,
        "records": [
            {
                "direction": entry.direction.value,
                "seq": entry.seq,
                "ok": entry.ok,
                "plaintext_hex": entry.plaintext.hex() if entry.plaintext is not None else None,
                "plaintext_printable": (
                    "".join(chr(b) if 32 <= b < 127 else "." for b in entry.plaintext)
                    if entry.plaintext is not None
                    else None
                ),
            }
            for entry in session.transcript
        ],
    }


def _material_dict(result: TrialResult, session: DecryptedSession, hypothesis: str | None) -> dict:
    return {
        "client_key": session.client_key.hex(),
        "client_iv": session.client_iv.hex(),
        "server_key": session.server_key.hex() if session.server_key else None,
        "server_iv": session.server_iv.hex() if session.server_iv else None,
        "hypothesis": hypothesis,
        "orientation_swapped": result.orientation_swapped,
    }


def run_pipeline(
    extract_dir,
    capture_source,
    capture_format: CaptureFormat | str = CaptureFormat.RAW_RECORDS,
    mode: str = "auto",
    config: ScanConfig | None = None,
    seq_window: int = 2,
    workers: int = 1,
    session_filter: tuple | None = None,
    clock=time.perf_counter,
) -> RunReport:
    """Load extracts, pick a scanner, scan, trial-decrypt, decrypt the session.

    In auto mode a counter-like explicit nonce selects the marker scanner
    first, with the standard scanner as fall-back; random-like nonces go
    straight to the standard scanner. Scan and decrypt phases are timed
    separately. ``clock`` is injectable so reports can be made byte-stable.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")

    capture = parse_capture(capture_source, capture_format, session_filter)
    cfg = config or ScanConfig(key_len_bytes=capture.handshake.key_len_bytes)
    extracts = load_extracts(extract_dir)
    style = explicit_nonce_style(capture, cfg.counter_nonce_bound)

    if mode == "auto":
        attempt_modes = ["windows", "standard"] if style is NonceStyle.COUNTER_LIKE else ["standard"]
    else:
        attempt_modes = [mode]

    report = RunReport(
        mode_requested=mode,
        mode_used=None,
        nonce_style=style.value,
        timings={"memory_analysis_secs": 0.0, "decrypt_analysis_secs": 0.0},
        candidates={"keys": None, "ivs": None, "key_blocks": None},
    )

    for attempt in attempt_modes:
        scan_start = clock()
        if attempt == "windows":
            keys, ivs = scan_windows(extracts, cfg, workers=workers)
            report.candidates = {"keys": len(keys), "ivs": len(ivs), "key_blocks": None}
            report.timings["memory_analysis_secs"] += clock() - scan_start
            decrypt_start = clock()
            try:
                pairs = pair_candidates(keys, ivs)
                result = trial_decrypt(capture, pairs, seq_window=seq_window, clock=clock)
                session = decrypt_session(capture, result, pairs=pairs, seq_window=seq_window)
            except (NoCandidates, NoValidDecrypt) as exc:
                report.timings["decrypt_analysis_secs"] += clock() - decrypt_start
                report.trials = {
                    "attempted": getattr(exc, "trials", 0),
                    "winner_index": None,
                    "seq_used": None,
                    "validation": None,
                }
                continue
            report.timings["decrypt_analysis_secs"] += clock() - decrypt_start
            hypothesis = None
        else:
            blocks = scan_standard(extracts, capture, cfg, workers=workers)
            report.candidates = {"keys": None, "ivs": None, "key_blocks": len(blocks)}
            report.timings["memory_analysis_secs"] += clock() - scan_start
            decrypt_start = clock()
            try:
                result = trial_decrypt_blocks(capture, blocks, seq_window=seq_window, clock=clock)
                session = decrypt_session(capture, result, blocks=blocks, seq_window=seq_window)
            except NoValidDecrypt as exc:
                report.timings["decrypt_analysis_secs"] += clock() - decrypt_start
                report.trials = {
                    "attempted": exc.trials,
                    "winner_index": None,
                    "seq_used": None,
                    "validation": None,
                }
                continue
            report.timings["decrypt_analysis_secs"] += clock() - decrypt_start
            hypothesis = blocks[result.block_index].hypothesis.value

        report.mode_used = attempt
        report.outcome = "decrypted_partial" if session.partial else "decrypted"
        report.trials = {
            "attempted": result.trials,
            "winner_index": result.pair_index if result.pair_index is not None else result.block_index,
            "seq_used": result.seq_used,
            "validation": result.validation.value,
        }
        report.material = _material_dict(result, session, hypothesis)
        report.session = _session_dict(session)
        return report

    return report


def _add_scan_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--key-size", type=int, choices=(16, 32), default=None,
                        help="AES key length in bytes (default: from the capture)")
    parser.add_argument("--iv-entropy", type=float, default=None, help="IV entropy gate (default 1.5)")
    parser.add_argument("--key-entropy", type=float, default=None,
                        help="key entropy gate (default 0.9*log2(key size))")
    parser.add_argument("--max-iv-distance", type=int, default=None,
                        help="max bytes after the IV marker to search (default 64)")
    parser.add_argument("--max-key-distance", type=int, default=None,
                        help="max bytes after the key marker to search (default 128)")
    parser.add_argument("--step", type=int, default=None, help="window stride in bytes (default 4)")
    parser.add_argument("--min-gap", type=int, default=None,
                        help="prune candidates closer than this many bytes (default 1000)")
    parser.add_argument("--counter-bound", type=int, default=None,
                        help="nonces below this value look counter-like (default 256)")


def _config_from_args(args, key_len: int) -> ScanConfig:
    kwargs = {"key_len_bytes": args.key_size or key_len}
    for attr, flag in (
        ("iv_entropy_threshold", "iv_entropy"),
        ("key_entropy_threshold", "key_entropy"),
        ("max_iv_distance", "max_iv_distance"),
        ("max_key_distance", "max_key_distance"),
        ("step", "step"),
        ("min_artefact_gap", "min_gap"),
        ("counter_nonce_bound", "counter_bound"),
    ):
        value = getattr(args, flag)
        if value is not None:
            kwargs[attr] = value
    return ScanConfig(**kwargs)


def _parse_filter(text: str | None) -> tuple | None:
    if text is None:
        return None
    try:
        left, right = text.split(",")
        ip_a, port_a = left.rsplit(":", 1)
        ip_b, port_b = right.rsplit(":", 1)
        return (ip_a, int(port_a), ip_b, int(port_b))
    except ValueError:
        raise argparse.ArgumentTypeError("filter must look like IP:PORT,IP:PORT")


def _emit(args, text: str) -> None:
    if getattr(args, "output", None):
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_decrypt(args) -> int:
    capture = parse_capture(args.capture, args.capture_format, _parse_filter(args.filter))
    cfg = _config_from_args(args, capture.handshake.key_len_bytes)
    clock = (lambda: 0.0) if args.no_timings else time.perf_counter
    report = run_pipeline(
        args.extracts,
        args.capture,
        capture_format=args.capture_format,
        mode=args.mode,
        config=cfg,
        seq_window=args.seq_window,
        workers=args.workers,
        session_filter=_parse_filter(args.filter),
        clock=clock,
    )
    payload = report.to_dict()
    _emit(args, render_json(payload) if args.format == "json" else render_text(payload))
    return EXIT_OK if report.outcome.startswith("decrypted") else EXIT_NO_DECRYPT


def _cmd_scan(args) -> int:
    extracts = load_extracts(args.extracts)
    if args.mode == "standard" or (args.mode == "auto" and args.capture):
        if not args.capture:
            print("error: standard scan needs --capture for the explicit nonce", file=sys.stderr)
            return EXIT_ERROR
        capture = parse_capture(args.capture, args.capture_format, _parse_filter(args.filter))
        cfg = _config_from_args(args, capture.handshake.key_len_bytes)
        blocks = scan_standard(extracts, capture, cfg, workers=args.workers)
        payload = {
            "mode": "standard",
            "key_blocks": [
                {
                    "extract_id": b.extract_id,
                    "offset": b.offset,
                    "hypothesis": b.hypothesis.value,
                    "client_key": b.client_key.hex(),
                    "server_key": b.server_key.hex(),
                    "client_iv": b.client_iv.hex(),
                    "server_iv": b.server_iv.hex(),
                }
                for b in blocks
            ],
        }
    else:
        cfg = _config_from_args(args, args.key_size or 32)
        keys, ivs = scan_windows(extracts, cfg, workers=args.workers)
        payload = {
            "mode": "windows",
            "keys": [
                {"extract_id": c.extract_id, "offset": c.offset, "entropy": round(c.entropy, 6),
                 "value": c.value.hex()}
                for c in keys
            ],
            "ivs": [
                {"extract_id": c.extract_id, "offset": c.offset, "entropy": round(c.entropy, 6),
                 "value": c.value.hex()}
                for c in ivs
            ],
        }
    _emit(args, render_json(payload))
    return EXIT_OK


def _cmd_parse_capture(args) -> int:
    capture = parse_capture(args.capture, args.capture_format, _parse_filter(args.filter))
    payload = {
        "cipher_suite": f"0x{capture.handshake.cipher_suite:04X}",
        "suite_name": capture.handshake.suite_name,
        "key_len_bytes": capture.handshake.key_len_bytes,
        "nonce_style": explicit_nonce_style(capture).value,
        "first_explicit_nonce": capture.first_explicit_nonce.hex(),
        "records": [
            {
                "direction": record.direction.value,
                "seq": record.seq,
                "content_type": record.content_type,
                "ciphertext_len": len(record.ciphertext),
            }
            for record in capture.records
        ],
    }
    _emit(args, render_json(payload))
    return EXIT_OK


def _cmd_entropy_profile(args) -> int:
    extracts = load_extracts(args.extracts)
    rows = []
    for extract in extracts.extracts:
        for offset, count in entropy_profile(extract, args.window, args.threshold, args.region_windows):
            rows.append((extract.name, offset, count))
    _emit(args, entropy_profile_csv(rows))
    return EXIT_OK


def _cmd_gen_fixture(args) -> int:
    spec = spec_from_json(args.spec) if args.spec else FixtureSpec()
    if args.seed is not None:
        spec.rng_seed = args.seed
    paths, _ = generate_fixture(spec, args.out)
    sys.stdout.write(render_json({
        "root": str(paths.root),
        "extract_dir": str(paths.extract_dir),
        "client_records": str(paths.client_records),
        "server_records": str(paths.server_records),
        "manifest": str(paths.manifest),
        "groundtruth": str(paths.groundtruth),
    }))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keysift",
        description="Recover TLS 1.2 AES-GCM key material from memory extracts and decrypt captured traffic",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    decrypt = sub.add_parser("decrypt", help="full pipeline: scan extracts, trial-decrypt, report")
    decrypt.add_argument("--extracts", required=True, help="directory of raw memory extract files")
    decrypt.add_argument("--capture", required=True,
                         help="capture input: directory with client.tls/server.tls, or a pcap file")
    decrypt.add_argument("--capture-format", choices=("raw_records", "pcap"), default="raw_records")
    decrypt.add_argument("--mode", choices=MODES, default="auto")
    decrypt.add_argument("--seq-window", type=int, default=2,
                         help="sequence numbers to try around the reconstruction (default 2)")
    decrypt.add_argument("--workers", type=int, default=1, help="parallel extract scanning threads")
    decrypt.add_argument("--filter", default=None, help="pcap session filter, IP:PORT,IP:PORT")
    decrypt.add_argument("--format", choices=("json", "text"), default="json")
    decrypt.add_argument("--output", default=None, help="write the report here instead of stdout")
    decrypt.add_argument("--no-timings", action="store_true",
                         help="zero the timing fields for byte-stable reports")
    _add_scan_flags(decrypt)
    decrypt.set_defaults(func=_cmd_decrypt)

    scan = sub.add_parser("scan", help="run a scanner and list candidates without decrypting")
    scan.add_argument("--extracts", required=True)
    scan.add_argument("--capture", default=None, help="needed for the standard scan")
    scan.add_argument("--capture-format", choices=("raw_records", "pcap"), default="raw_records")
    scan.add_argument("--mode", choices=MODES, default="windows")
    scan.add_argument("--workers", type=int, default=1)
    scan.add_argument("--filter", default=None)
    scan.add_argument("--output", default=None)
    _add_scan_flags(scan)
    scan.set_defaults(func=_cmd_scan)

    pc = sub.add_parser("parse-capture", help="parse a capture and summarize the session")
    pc.add_argument("--capture", required=True)
    pc.add_argument("--capture-format", choices=("raw_records", "pcap"), default="raw_records")
    pc.add_argument("--filter", default=None)
    pc.add_argument("--output", default=None)
    pc.set_defaults(func=_cmd_parse_capture)

    ep = sub.add_parser("entropy-profile", help="per-region high-entropy window counts as CSV")
    ep.add_argument("--extracts", required=True)
    ep.add_argument("--window", type=int, default=32)
    ep.add_argument("--threshold", type=float, default=4.5)
    ep.add_argument("--region-windows", type=int, default=256,
                    help="windows aggregated per CSV row (default 256)")
    ep.add_argument("--output", default=None)
    ep.set_defaults(func=_cmd_entropy_profile)

    gf = sub.add_parser("gen-fixture", help="fabricate a synthetic extract set and matching capture")
    gf.add_argument("--spec", default=None, help="fixture recipe as JSON; defaults when omitted")
    gf.add_argument("--seed", type=int, default=None, help="override the recipe seed")
    gf.add_argument("--out", required=True, help="output directory")
    gf.set_defaults(func=_cmd_gen_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeysiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
