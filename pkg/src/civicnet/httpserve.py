"""Real-HTTP wrapper around one local node (the ``node serve`` command).

The served node is a single-node world (validator set of one) seeded by
running a scenario fixture locally; the virtual clock tracks wall time.
Requests are serialized through one lock, matching the node's ordered
command-queue contract. CORS is permissive so a browser wallet can connect.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .api import Api
from .scenario import ScenarioRunner, load_scenario
from .world import World, WorldConfig


def build_serve_world(config: dict, base_dir: Path) -> tuple[World, dict]:
    scenario_path = base_dir / config.get("scenario", "scenarios/relocation.json")
    script = load_scenario(scenario_path)
    world_config = WorldConfig(
        seed=int(config.get("seed", 42)),
        latency_ms=(0, 0),
        loss_rate=0.0,
        local=True,
        data_dir=Path(config["data_dir"]) if config.get("data_dir") else None,
    )
    world = World.build(world_config, script.actors)
    runner = ScenarioRunner(world, script)
    runner.run()
    tokens = dict(runner.state.tokens)
    if config.get("pending_demo", True):
        _seed_pending_requests(world, runner)
    return world, tokens


def _seed_pending_requests(world: World, runner: ScenarioRunner) -> None:
    """Leave live pending requests so a wallet UI has cards to decide."""
    docs = runner.state.docs
    tokens = runner.state.tokens
    demo = [
        ("Employer", "Alice", docs.get("diploma"), "background check"),
        ("Landlord", "Alice", docs.get("pt_ssn"), "rental contract"),
    ]
    for requester, grantor, document_id, purpose in demo:
        if document_id is None or requester not in tokens:
            continue
        world.api(
            requester,
            "POST",
            "/requests",
            token=tokens[requester],
            body={
                "grantor": world.identity_hex(grantor),
                "document_id": document_id,
                "purpose": purpose,
            },
        )


class _Handler(BaseHTTPRequestHandler):
    server_version = "civicnet/0.1"
    world: World = None
    lock: threading.Lock = None
    started_mono: float = 0.0
    base_virtual_ms: int = 0

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type")

    def _respond(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _advance_clock(self):
        elapsed_ms = int((time.monotonic() - self.started_mono) * 1000)
        self.world.net.advance_to(self.base_virtual_ms + elapsed_ms)

    def _dispatch(self, method: str):
        parsed = urllib.parse.urlparse(self.path)
        query = {k: v[0] for k, v in urllib.parse.parse_qs(parsed.query).items()}
        body = {}
        length = int(self.headers.get("Content-Length", 0) or 0)
        if length:
            try:
                body = json.loads(self.rfile.read(length).decode("utf-8"))
            except json.JSONDecodeError:
                self._respond(400, {"error": "bad_request", "detail": "body is not JSON"})
                return
        headers = {"authorization": self.headers.get("Authorization", "")}

        wait_s = float(query.pop("wait", 0) or 0)
        deadline = time.monotonic() + min(wait_s, 30.0)
        while True:
            with self.lock:
                self._advance_clock()
                api = Api(self.world.operator)
                status, payload = self.world.run(
                    api.handle(method, parsed.path, query, headers, body)
                )
            is_empty_events = (
                parsed.path.rstrip("/") == "/events"
                and status == 200
                and not payload.get("events")
            )
            if not is_empty_events or time.monotonic() >= deadline:
                break
            time.sleep(0.25)
        self._respond(status, payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.end_headers()


def serve(config_path: Path) -> None:
    config = json.loads(Path(config_path).read_text(encoding="utf-8"))
    config_home = Path(config_path).resolve().parent
    base_dir = (config_home / config["base_dir"]).resolve() if config.get("base_dir") else config_home
    world, _tokens = build_serve_world(config, base_dir)

    host, _, port = config.get("listen", "127.0.0.1:8547").partition(":")
    handler = type(
        "Handler",
        (_Handler,),
        {
            "world": world,
            "lock": threading.Lock(),
            "started_mono": time.monotonic(),
            "base_virtual_ms": world.net.now_ms,
        },
    )
    server = ThreadingHTTPServer((host, int(port or 8547)), handler)
    print(f"civicnet node serving on http://{host}:{port or 8547} "
          f"({len(world.operator.wallets)} wallets, "
          f"{len(world.operator.replica.entries)} ledger entries)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
