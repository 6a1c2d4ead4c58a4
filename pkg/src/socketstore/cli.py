"""``socketstore`` command line: serve a service, run a scenario, drive the store."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path as FsPath
from typing import Any, Sequence

from .behaviors import load_manifest
from .core import ModuleDescriptor, Rating
from .errors import ScenarioError, SocketStoreError
from .fabric import EchoPeer, PeerTable, SinkPeer
from .netsim import NetworkControl, load_topology
from .proxy import PoolPolicy, StoreProxy
from .registry import Registry, RegistryConfig
from .scenario import run_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_STATE = "socketstore-registry.jsonl"


def _now_ms() -> int:
    return int(time.time() * 1000)


def _read_json(path: str) -> Any:
    try:
        return json.loads(FsPath(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise _UsageError(f"cannot read {path}: {exc}") from None


class _UsageError(Exception):
    pass


# -- serve ------------------------------------------------------------------------
def _build_service(svc: str, cfg: dict, base: FsPath):
    from .service import (
        NetworkService,
        RemoteNetwork,
        RemoteRegistry,
        StoreService,
        connect_endpoint,
    )

    if svc == "netsim":
        topo = cfg.get("topology")
        if topo is None:
            raise _UsageError("netsim config needs 'topology'")
        doc = topo if isinstance(topo, dict) else _read_json(str(base / topo))
        return NetworkService(NetworkControl(load_topology(doc)))
    if svc == "registry":
        log_path = cfg.get("log")
        registry = Registry(
            RegistryConfig.from_dict(cfg.get("registry") or {}),
            log_path=str(base / log_path) if log_path else None,
            clock=_now_ms,
            manifest=load_manifest(),
        )
        return StoreService(registry)
    if svc == "proxy":
        try:
            registry = RemoteRegistry(connect_endpoint(cfg["registry_endpoint"]))
            network = RemoteNetwork(connect_endpoint(cfg["netsim_endpoint"]))
        except KeyError as exc:
            raise _UsageError(f"proxy config needs {exc.args[0]!r}") from None
        peers = PeerTable()
        for p in cfg.get("peers") or ():
            peers.bind(p["ip"], p["port"], {"echo": EchoPeer, "sink": SinkPeer}[p.get("kind", "echo")]())
        proxy = StoreProxy(registry, network, peers, PoolPolicy.from_dict(cfg.get("policy") or {}), clock=_now_ms)
        return StoreService(registry, proxy)
    raise _UsageError(f"unknown service {svc!r}")


def cmd_serve(args) -> int:
    from .service import FrameServer

    cfg = _read_json(args.config) if args.config else {}
    base = FsPath(args.config).parent if args.config else FsPath(".")
    service = _build_service(args.service, cfg, base)
    host = args.host or cfg.get("host", "127.0.0.1")
    port = args.port if args.port is not None else cfg.get("port", 0)
    with FrameServer((host, port), service) as server:
        print(f"serving {args.service} on {server.endpoint}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return EXIT_OK


# -- run --------------------------------------------------------------------------
def cmd_run(args) -> int:
    report = run_scenario(args.scenario, args.seed)
    for a in report.assertions:
        mark = "PASS" if a["ok"] else "FAIL"
        line = f"{mark} step {a['step']:>3} {a['check']}"
        if not a["ok"]:
            line += f": expected {json.dumps(a['expected'])}, got {json.dumps(a['actual'])}"
        print(line)
    print(f"{report.scenario}: {'passed' if report.passed else 'FAILED'} "
          f"({len(report.assertions) - len(report.failures())}/{len(report.assertions)} assertions)")
    if args.report:
        FsPath(args.report).write_text(report.to_json(), "utf-8")
    return report.exit_code


# -- store ------------------------------------------------------------------------
class _LocalStore:
    """Store operations against a registry persisted in a local log file."""

    def __init__(self, state: str, secret: str | None):
        cfg = RegistryConfig(secret=secret) if secret else RegistryConfig()
        self.r = Registry(cfg, log_path=state, clock=_now_ms, manifest=load_manifest())

    def call(self, op: str, **kw) -> Any:
        r = self.r
        if op == "publish":
            return r.publish_module(ModuleDescriptor.from_dict(kw["desc"]), kw["submitter"]).to_dict()
        if op == "review":
            return r.review_module(kw["key"], kw["verdict"]).to_dict()
        if op == "rate":
            return r.rate_module(kw["key"], Rating.from_dict(kw["rating"])).to_dict()
        if op == "rank":
            return [list(row) for row in r.rank_modules(kw.get("query"))]
        if op == "browse":
            return [{**d.to_dict(), "score": r.score(d.module_key)} for d in r.browse(kw.get("query"))]
        if op == "purchase":
            return r.purchase(kw["app_id"], kw["key"], kw.get("device_fingerprint")).to_dict()
        if op == "deprecate":
            return r.transition_lifecycle(kw["key"], "deprecated").to_dict()
        if op == "dispose":
            return r.transition_lifecycle(kw["key"], "disposed").to_dict()
        raise _UsageError(op)


class _RemoteStore:
    def __init__(self, endpoint: str):
        from .service import connect_endpoint

        self.link = connect_endpoint(endpoint)

    def call(self, op: str, **kw) -> Any:
        return self.link.rpc(op, **kw)


def _print_table(rows: list[tuple[str, float, str]]) -> None:
    if not rows:
        print("(no modules)")
        return
    width = max(len(r[0]) for r in rows)
    for i, (key, score, extra) in enumerate(rows, 1):
        print(f"{i:>3}  {key:<{width}}  {score:.4f}  {extra}".rstrip())


def cmd_store(args) -> int:
    store = _RemoteStore(args.endpoint) if args.endpoint else _LocalStore(args.state, args.secret)
    op = args.op
    if op == "publish":
        doc = _read_json(args.manifest)
        submitter = args.submitter or doc.get("contributor")
        out = store.call("publish", desc=doc, submitter=submitter)
        print(f"{out['module_key']} v{out['version']} {out['lifecycle']}")
    elif op == "review":
        out = store.call("review", key=args.key, verdict=args.verdict)
        print(f"{out['module_key']} {out['lifecycle']}")
    elif op == "rate":
        rating = Rating(args.rater, args.stars, args.comment or "", _now_ms())
        out = store.call("rate", key=args.key, rating=rating.to_dict())
        print(f"{out['module_key']} rated {args.stars} ({len(out['ratings'])} ratings)")
    elif op == "rank":
        rows = store.call("rank", query=args.query)
        _print_table([(k, s, "") for k, s in rows])
    elif op == "browse":
        rows = store.call("browse", query=args.query)
        _print_table([(d["module_key"], d["score"], f"v{d['version']} {d['lifecycle']} {sorted(d['parameterizations'])}") for d in rows])
    elif op == "purchase":
        out = store.call("purchase", app_id=args.app, key=args.key, device_fingerprint=args.fingerprint)
        print(json.dumps(out, sort_keys=True))
    elif op in ("deprecate", "dispose"):
        out = store.call(op, key=args.key)
        print(f"{out['module_key']} {out['lifecycle']}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socketstore", description="Socket Store services, scenarios and store operations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run one service over TCP")
    s.add_argument("service", choices=("registry", "proxy", "netsim"))
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    r = sub.add_parser("run", help="run a scenario (a path or a bundled name)")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--report", help="write the JSON trace report here")
    r.set_defaults(func=cmd_run)

    st = sub.add_parser("store", help="registry operations")
    where = st.add_mutually_exclusive_group()
    where.add_argument("--endpoint", help="tcp://host:port of a registry service")
    where.add_argument("--state", default=DEFAULT_STATE, help="local registry log (default: %(default)s)")
    st.add_argument("--secret", help="entitlement secret for the local registry")
    ops = st.add_subparsers(dest="op", required=True)
    o = ops.add_parser("publish")
    o.add_argument("manifest", help="module descriptor JSON")
    o.add_argument("--submitter")
    o = ops.add_parser("review")
    o.add_argument("key")
    o.add_argument("verdict", choices=("accept", "request_revision"))
    for name in ("browse", "rank"):
        o = ops.add_parser(name)
        o.add_argument("--query")
    o = ops.add_parser("purchase")
    o.add_argument("key")
    o.add_argument("--app", required=True)
    o.add_argument("--fingerprint")
    o = ops.add_parser("rate")
    o.add_argument("key")
    o.add_argument("--stars", type=int, required=True)
    o.add_argument("--rater", required=True)
    o.add_argument("--comment")
    for name in ("deprecate", "dispose"):
        ops.add_parser(name).add_argument("key")
    st.set_defaults(func=cmd_store)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"scenario error: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except SocketStoreError as exc:
        reason = exc.details.get("reason")
        print(f"error: {exc.code}: {reason or exc.message}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
