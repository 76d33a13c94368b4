"""Command-line entry point: ``iotlabel {extract,enrich,label,evaluate,catalog}``.

Exit codes: 0 success, 1 validation or endpoint failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import dataset as ds
from . import __version__
from .backends import AuditLog, BackendError, ChatClient, KeywordOracle, StubChatClient, ZeroShotClient
from .catalogs import CatalogError, Catalogs, FunctionCatalog, load_bundled, load_catalogs, read_functions_csv, save_catalogs
from .enrichment import (
    EnrichmentCache,
    EnrichmentSettings,
    FixtureSearchProvider,
    HttpSearchProvider,
    SearchError,
    enrich_device,
)
from .evaluation import (
    FunctionFamily,
    VendorFamily,
    evaluate,
    format_table,
    optimize_config,
    per_feature_accuracy,
    select_unique_devices,
    truth_labels,
)
from .features import FEATURE_TYPES
from .function import label_function
from .maintenance import (
    UpdateAborted,
    acquire_catalogs,
    apply_type_additions,
    update_type_catalog,
    update_vendor_catalog,
)
from .oui import OuiDatabase
from .pcap import CaptureParseError, extract_from_pcap
from .scoring import LabelResult, RankedLabel, ScoringConfig
from .vendor import label_vendor, oui_baseline

logger = logging.getLogger("iotlabel")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
STUB_SCHEME = "stub://"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _load_dataset(path: str) -> ds.Dataset:
    try:
        return ds.load(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}", EXIT_IO) from exc


def _load_catalogs(path: Optional[str]) -> Catalogs:
    try:
        return load_catalogs(path) if path else load_bundled()
    except OSError as exc:
        raise CliError(f"cannot read catalogs {path}: {exc}", EXIT_IO) from exc


def _load_oui(path: Optional[str]) -> OuiDatabase:
    if path is None:
        return OuiDatabase.bundled()
    try:
        return OuiDatabase.load(path)
    except OSError as exc:
        raise CliError(f"cannot read OUI database {path}: {exc}", EXIT_IO) from exc


def _load_configs(path: Optional[str]) -> tuple[ScoringConfig, ScoringConfig]:
    """``{"vendor": cfg, "function": cfg}`` or a single config used for both."""
    if path is None:
        return ScoringConfig(), ScoringConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: invalid JSON: {exc}") from exc
    if "vendor" in doc or "function" in doc:
        return (
            ScoringConfig.from_dict(doc.get("vendor", {})),
            ScoringConfig.from_dict(doc.get("function", {})),
        )
    cfg = ScoringConfig.from_dict(doc)
    return cfg, cfg


def _endpoint(flag: Optional[str], env: str) -> Optional[str]:
    return flag or os.environ.get(env) or None


def _classifier(args, audit: AuditLog):
    if args.backend == "oracle":
        if args.keywords:
            try:
                return KeywordOracle.load(args.keywords)
            except OSError as exc:
                raise CliError(f"cannot read keywords {args.keywords}: {exc}", EXIT_IO) from exc
        return KeywordOracle.bundled()
    url = _endpoint(args.zs_url, "IOTL_ZS_URL")
    if not url:
        raise CliError("remote backend needs --zs-url or IOTL_ZS_URL")
    return ZeroShotClient(url, api_key=os.environ.get("IOTL_ZS_KEY"), audit=audit, max_concurrency=args.concurrency)


def _chat(args, audit: AuditLog):
    url = _endpoint(args.chat, "IOTL_CHAT_URL")
    if not url:
        raise CliError("a chat endpoint is required (--chat or IOTL_CHAT_URL)")
    if url.startswith(STUB_SCHEME):
        try:
            return StubChatClient(url[len(STUB_SCHEME):], audit=audit)
        except OSError as exc:
            raise CliError(f"cannot read chat stub: {exc}", EXIT_IO) from exc
    return ChatClient(url, api_key=os.environ.get("IOTL_CHAT_KEY"), audit=audit)


def _run_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from exc
    return out


def _run_config(args, **extra: Any) -> dict[str, Any]:
    keep = {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}
    keep.update(extra)
    return keep


# ---------------------------------------------------------------------------
# extract


def cmd_extract(args) -> int:
    if args.pcap:
        db = _load_oui(args.oui)
        try:
            capture = Path(args.pcap).read_bytes()
        except OSError as exc:
            raise CliError(f"cannot read capture {args.pcap}: {exc}", EXIT_IO) from exc
        try:
            devices = extract_from_pcap(capture, device_filter=args.device or None, oui_db=db)
        except CaptureParseError as exc:
            raise CliError(f"{args.pcap}: {exc}") from exc
        doc = ds.to_document(devices)
    else:
        data = _load_dataset(args.json)
        doc = ds.to_document(data.devices, data.truth, data.enriched)
    ds.validate(doc)
    _write(Path(args.output), ds.dumps(doc))
    print(f"{len(doc['devices'])} devices written to {args.output}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# enrich


def cmd_enrich(args) -> int:
    data = _load_dataset(args.dataset)
    cache = EnrichmentCache(args.cache)
    provider = None
    if not args.offline:
        url = _endpoint(args.search, "IOTL_SEARCH_URL")
        if not url:
            raise CliError("no search provider: pass --search, set IOTL_SEARCH_URL, or use --offline")
        if url.startswith(STUB_SCHEME):
            try:
                provider = FixtureSearchProvider(url[len(STUB_SCHEME):])
            except OSError as exc:
                raise CliError(f"cannot read search fixture: {exc}", EXIT_IO) from exc
        else:
            provider = HttpSearchProvider(url, api_key=os.environ.get("IOTL_SEARCH_KEY"))
    settings = EnrichmentSettings(k=args.k, concurrency=args.concurrency)
    enriched = {}
    misses = 0
    failures = 0
    for dev in data.devices:
        try:
            ed = enrich_device(dev, provider, cache, settings=settings)
        except SearchError as exc:
            raise CliError(f"enrichment failed: {exc}") from exc
        failures += len(ed.errors)
        misses += sum(1 for t in FEATURE_TYPES for ef in ed.enriched[t] if not ef.results)
        enriched[dev.device_id] = ed
    _write(Path(args.output), ds.dumps(ds.to_document(data.devices, data.truth, enriched)))
    if misses or failures:
        print(f"warning: {misses} values without results, {failures} failed lookups", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# label


def _label_all(data: ds.Dataset, catalogs: Catalogs, vcfg, fcfg, backend, top_k: int, parallelism: int):
    vendors: dict[str, LabelResult] = {}
    functions: dict[str, LabelResult] = {}
    for ed in data.enriched_devices():
        v = label_vendor(ed, catalogs.vendors, vcfg, top_k=top_k)
        vendors[ed.device_id] = v
        functions[ed.device_id] = label_function(
            ed, v.top, catalogs, fcfg, backend, top_k=top_k, parallelism=parallelism
        )
    return vendors, functions


def labels_report(data: ds.Dataset, catalogs: Catalogs, vendors, functions) -> dict[str, Any]:
    pairs = catalogs.types.as_set()
    out = []
    for dev in data.devices:
        v, f = vendors[dev.device_id], functions[dev.device_id]
        entry = {
            "device_id": dev.device_id,
            "type": [v.top, f.top],
            "new_type": bool(v.top and f.top and (v.top, f.top) not in pairs),
            "vendor": v.to_report(),
            "function": f.to_report(),
        }
        if f.error:
            entry["function"]["error"] = f.error
        out.append(entry)
    return {"devices": out}


def _explain(device_id: str, vres: LabelResult, fres: LabelResult) -> str:
    lines = [f"device {device_id}"]
    for kind, res in (("vendor", vres), ("function", fres)):
        if res.abstained:
            lines.append(f"  {kind}: (no label)")
            continue
        lines.append(f"  {kind}: {res.top} (score {res.best_score:.4f})")
        for ev in res.ranked[0].evidence[:5]:
            lines.append(
                f"    [{ev.feature_type.value}] {ev.source_value} #{ev.result_rank} "
                f"+{ev.contribution:.4f}: {ev.excerpt}"
            )
    return "\n".join(lines) + "\n"


def cmd_label(args) -> int:
    data = _load_dataset(args.dataset)
    if args.explain and args.explain not in {d.device_id for d in data.devices}:
        raise CliError(f"unknown device id {args.explain!r}")
    catalogs = _load_catalogs(args.catalogs)
    vcfg, fcfg = _load_configs(args.config)
    out = _run_dir(args.output)
    audit = AuditLog(out / "audit.jsonl" if args.backend == "remote" else None)
    backend = _classifier(args, audit)
    vendors, functions = _label_all(data, catalogs, vcfg, fcfg, backend, args.top_k, args.concurrency)
    _write(out / "config.json", _dump(_run_config(args, scoring={"vendor": vcfg.to_dict(), "function": fcfg.to_dict()})))
    _write(out / "reports" / "labels.json", _dump(labels_report(data, catalogs, vendors, functions)))
    if args.explain:
        sys.stdout.write(_explain(args.explain, vendors[args.explain], functions[args.explain]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _results_from_reports(path: str) -> tuple[dict[str, LabelResult], dict[str, LabelResult]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read reports {path}: {exc}", EXIT_IO) from exc

    def rebuild(rep: dict) -> LabelResult:
        ranked = [RankedLabel(x["label"], x["score"]) for x in rep.get("top2", [])]
        return LabelResult(ranked, {r.label: r.score for r in ranked})

    vendors = {d["device_id"]: rebuild(d["vendor"]) for d in doc["devices"]}
    functions = {d["device_id"]: rebuild(d["function"]) for d in doc["devices"]}
    return vendors, functions


def _type_results(vendors, functions) -> dict[str, LabelResult]:
    """Type ranking: the k-th guess pairs the k-th vendor with the k-th function."""
    out = {}
    for dev, v in vendors.items():
        f = functions[dev]
        ranked = [RankedLabel(f"{a}|{b}", 0.0) for a, b in zip(v.labels(), f.labels())]
        out[dev] = LabelResult(ranked)
    return out


def cmd_evaluate(args) -> int:
    data = _load_dataset(args.dataset)
    missing = [d.device_id for d in data.devices if d.device_id not in data.truth]
    if missing:
        raise CliError(f"devices without ground truth: {', '.join(missing[:5])}")
    catalogs = _load_catalogs(args.catalogs)
    out = _run_dir(args.output)
    devices = data.enriched_devices()
    if args.unique_only:
        devices = select_unique_devices(devices, data.truth, args.seed)
    ids = [d.device_id for d in devices]
    vtruth = truth_labels({i: data.truth[i] for i in ids}, "vendor", catalogs)
    ftruth = truth_labels({i: data.truth[i] for i in ids}, "function", catalogs)
    ttruth = {i: f"{vtruth[i]}|{ftruth[i]}" for i in ids}
    vcfg, fcfg = _load_configs(args.config)
    audit = AuditLog(out / "audit.jsonl" if args.backend == "remote" else None)
    backend = _classifier(args, audit)
    result: dict[str, Any] = {"devices": ids, "seed": args.seed}

    if args.optimize:
        vopt = optimize_config(devices, vtruth, VendorFamily(catalogs.vendors), args.folds, args.seed)
        vcfg = vopt.config
        vendor_top = {d.device_id: label_vendor(d, catalogs.vendors, vcfg).top for d in devices}
        fopt = optimize_config(
            devices, ftruth, FunctionFamily(catalogs, backend, vendor_top), args.folds, args.seed
        )
        fcfg = fopt.config
        result["optimize"] = {"vendor": vopt.to_dict(), "function": fopt.to_dict()}

    if args.reports:
        vres, fres = _results_from_reports(args.reports)
        vres = {i: vres[i] for i in ids}
        fres = {i: fres[i] for i in ids}
    else:
        subset = ds.Dataset([d.device for d in devices], data.truth, {d.device_id: d for d in devices})
        vres, fres = _label_all(subset, catalogs, vcfg, fcfg, backend, 3, args.concurrency)

    vrep = evaluate(vres, vtruth, "IoT labeling", "V", "all")
    frep = evaluate(fres, ftruth, "IoT labeling", "V", "all")
    if not args.reports:
        for t in FEATURE_TYPES:
            vrep.per_feature[t.value] = per_feature_accuracy(
                devices, vtruth, lambda d, c: label_vendor(d, catalogs.vendors, c), t
            )
            frep.per_feature[t.value] = per_feature_accuracy(
                devices, ftruth,
                lambda d, c: label_function(d, vres[d.device_id].top, catalogs, c, backend), t,
            )
    reports = {"vendor": [vrep], "function": [frep], "type": [evaluate(_type_results(vres, fres), ttruth, "IoT labeling", "T", "all")]}
    if not args.reports:
        fall = {
            d.device_id: label_function(d, None, catalogs, fcfg, backend, candidates=catalogs.functions.names)
            for d in devices
        }
        reports["function"].append(evaluate(fall, ftruth, "IoT labeling", "A", "all"))
    if args.baseline == "oui":
        db = _load_oui(args.oui)
        ores = {d.device_id: oui_baseline(d.device, db, catalogs.vendors) for d in devices}
        reports["vendor"].append(evaluate(ores, vtruth, "OUI", "-", "oui"))

    result["reports"] = {k: [r.to_dict() for r in v] for k, v in reports.items()}
    result["scoring"] = {"vendor": vcfg.to_dict(), "function": fcfg.to_dict()}
    _write(out / "config.json", _dump(_run_config(args)))
    _write(out / "eval.json", _dump(result))
    for kind, reps in reports.items():
        sys.stdout.write(f"{kind}\n{format_table(reps)}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# catalog


def _save_catalogs(catalogs: Catalogs, dest: str) -> None:
    try:
        save_catalogs(catalogs, dest)
    except OSError as exc:
        raise CliError(f"cannot write catalogs to {dest}: {exc}", EXIT_IO) from exc


def _emit_report(report: dict, path: Optional[str]) -> None:
    text = _dump(report)
    if path:
        _write(Path(path), text)
    sys.stdout.write(text)


def cmd_catalog(args) -> int:
    if args.action == "list":
        c = _load_catalogs(args.catalogs)
        sys.stdout.write(_dump(c.sizes()))
        return EXIT_OK

    if not args.output:
        raise CliError(f"catalog {args.action} needs -o/--output")
    audit = AuditLog(args.audit)
    chat = _chat(args, audit)

    if args.action == "acquire":
        if args.functions:
            try:
                fpath = Path(args.functions)
                names = read_functions_csv(fpath) if fpath.suffix == ".csv" else json.loads(fpath.read_text(encoding="utf-8"))
            except OSError as exc:
                raise CliError(f"cannot read functions {args.functions}: {exc}", EXIT_IO) from exc
            seed = FunctionCatalog(names)
        else:
            seed = _load_catalogs(args.catalogs).functions
        catalogs, report = acquire_catalogs(seed, chat)
        _save_catalogs(catalogs, args.output)
        _emit_report(report.to_dict(), args.report)
        return EXIT_OK

    base = _load_catalogs(args.catalogs)
    if not args.dataset:
        raise CliError(f"catalog {args.action} needs --dataset")
    data = _load_dataset(args.dataset)
    devices = data.enriched_devices()

    if args.action == "update-vendors":
        try:
            catalogs, report = update_vendor_catalog(devices, base, chat)
        except UpdateAborted as exc:
            raise CliError(str(exc)) from exc
        _save_catalogs(catalogs, args.output)
        _emit_report(report.to_dict(), args.report)
        return EXIT_OK

    # update-types
    vcfg, fcfg = _load_configs(args.config)
    backend = _classifier(args, audit)
    pairs, prov = [], {}
    for d in devices:
        vendor = label_vendor(d, base.vendors, vcfg).top
        if vendor is None:
            continue
        pair = update_type_catalog(d, vendor, base, fcfg, backend, chat)
        if pair and pair not in pairs:
            pairs.append(pair)
            prov[f"{pair[0]}|{pair[1]}"] = {"source": "update-types", "device": d.device_id}
    catalogs, report = apply_type_additions(base, pairs, prov)
    _save_catalogs(catalogs, args.output)
    _emit_report(report.to_dict(), args.report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("oracle", "remote"), default="oracle",
                   help="function classifier: offline keyword oracle or remote zero-shot endpoint")
    p.add_argument("--keywords", help="keyword map for the oracle backend")
    p.add_argument("--zs-url", help="zero-shot endpoint (default: $IOTL_ZS_URL)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--concurrency", type=int, default=4)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="iotlabel", description="Label IoT devices from traffic features.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="extract device features from a capture or JSON log")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pcap")
    src.add_argument("--json")
    p.add_argument("--oui", help="Wireshark manuf file (default: bundled)")
    p.add_argument("--device", action="append", help="restrict to this MAC (repeatable)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("enrich", parents=[common], help="attach web-search results to every feature value")
    p.add_argument("dataset")
    p.add_argument("--cache", required=True)
    p.add_argument("--offline", action="store_true", help="cache only; misses yield no results")
    p.add_argument("--search", help="search endpoint or stub://fixture.json (default: $IOTL_SEARCH_URL)")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("label", parents=[common], help="label vendor and function for every device")
    p.add_argument("dataset")
    p.add_argument("--catalogs", help="catalog directory (default: bundled)")
    p.add_argument("--config", help="scoring config JSON")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--explain", metavar="DEVICE_ID")
    _add_backend(p)
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("evaluate", parents=[common], help="HIT1/HIT2 against ground truth")
    p.add_argument("dataset")
    p.add_argument("--catalogs")
    p.add_argument("--config")
    p.add_argument("--reports", help="reuse a labels.json instead of relabeling")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--unique-only", action="store_true")
    p.add_argument("--baseline", choices=("oui",))
    p.add_argument("--oui")
    _add_backend(p)
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("catalog", parents=[common], help="inspect or update catalogs")
    p.add_argument("action", choices=("list", "acquire", "update-vendors", "update-types"))
    p.add_argument("--catalogs", help="source catalog directory (default: bundled)")
    p.add_argument("--functions", help="seed functions (.json list or .csv) for acquire")
    p.add_argument("--dataset", help="enriched dataset for updates")
    p.add_argument("--chat", help="chat endpoint or stub://replies.json (default: $IOTL_CHAT_URL)")
    p.add_argument("--config")
    p.add_argument("--audit", help="append chat exchanges to this JSON-lines file")
    p.add_argument("--report", help="also write the change report here")
    _add_backend(p)
    p.add_argument("-o", "--output", help="destination catalog directory")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ds.DatasetValidationError, CatalogError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BackendError as exc:
        print(f"error: endpoint failure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
