/**
 * End-to-end: spawn one civicnet node seeded with the relocation fixture and
 * drive the wallet flows through the UI's own client and store modules.
 */

import assert from "node:assert/strict";
import { after, before, test } from "node:test";
import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";

import { ApiClient, ApiError } from "../src/api.js";
import { EventLoop } from "../src/events.js";
import { WalletStore } from "../src/state.js";

const PORT = 8639;
const BASE = `http://127.0.0.1:${PORT}`;
const REPO_ROOT = resolve(process.cwd(), "..");

let node: ChildProcess;

async function waitForNode(timeoutMs = 90_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/ledger/verify`);
      if (response.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 500));
  }
  throw new Error("node did not become ready");
}

before(async () => {
  const dir = mkdtempSync(join(tmpdir(), "civicnet-e2e-"));
  const config = {
    seed: 42,
    listen: `127.0.0.1:${PORT}`,
    scenario: "scenarios/relocation.json",
    base_dir: REPO_ROOT,
    pending_demo: true,
  };
  const configPath = join(dir, "node.json");
  writeFileSync(configPath, JSON.stringify(config));
  node = spawn("python3", ["-m", "civicnet.cli", "node", "serve", "--config", configPath], {
    cwd: REPO_ROOT,
    stdio: ["ignore", "pipe", "pipe"],
  });
  node.stderr?.on("data", (chunk) => process.stderr.write(chunk));
  await waitForNode();
});

after(() => {
  node.kill("SIGTERM");
});

test("sign-in populates Alice's dashboard from the fixture", async () => {
  const store = new WalletStore(new ApiClient(BASE));
  await store.signIn("alice", "alice-pass");
  assert.equal(store.session?.displayName, "Alice");
  assert.ok(store.documents.length >= 3, "Alice holds her issued documents");
  assert.ok(store.pending.length >= 2, "fixture leaves live pending requests");
});

test("invalid password shows an error and no session", async () => {
  const store = new WalletStore(new ApiClient(BASE));
  await assert.rejects(() => store.signIn("alice", "wrong-password"));
  assert.equal(store.session, null);
  assert.match(store.notice ?? "", /password/i);
});

test("approve path: requester can open the document afterwards", async () => {
  const alice = new WalletStore(new ApiClient(BASE));
  await alice.signIn("alice", "alice-pass");
  const card = alice.pending.find((c) => c.requesterName === "Employer");
  assert.ok(card, "employer request card is rendered while pending");

  await alice.approve(card.requestId);
  assert.ok(!alice.pending.some((c) => c.requestId === card.requestId));

  const employer = new ApiClient(BASE);
  await employer.signIn("employer", "employer-pass");
  const requests = await employer.requests();
  const mine = requests.mine.find((r) => r.request_id === card.requestId);
  assert.equal(mine?.state, "approved");
  assert.ok(mine?.document_id);
  const payload = await employer.documentPayload(mine.document_id);
  const record = JSON.parse(Buffer.from(payload.payload, "hex").toString("utf-8"));
  assert.equal(record["titlos_spoudon"], "diploma in computer engineering");
});

test("deny path: payload endpoint keeps returning 403", async () => {
  const alice = new WalletStore(new ApiClient(BASE));
  await alice.signIn("alice", "alice-pass");
  const card = alice.pending.find((c) => c.requesterName === "Landlord");
  assert.ok(card, "landlord request card is pending");

  await alice.deny(card.requestId);

  const landlord = new ApiClient(BASE);
  await landlord.signIn("landlord", "landlord-pass");
  const requests = await landlord.requests();
  const mine = requests.mine.find((r) => r.request_id === card.requestId);
  assert.equal(mine?.state, "denied");
  assert.ok(mine?.document_id);
  await assert.rejects(
    () => landlord.documentPayload(mine.document_id!),
    (error: unknown) => {
      assert.ok(error instanceof ApiError);
      assert.equal(error.status, 403);
      return true;
    },
  );
});

test("double decision on one card is reconciled via 409", async () => {
  const employer = new ApiClient(BASE);
  await employer.signIn("employer", "employer-pass");
  const alice = new WalletStore(new ApiClient(BASE));
  await alice.signIn("alice", "alice-pass");
  const doc = alice.documents[0];
  const fresh = await employer.createRequest({
    grantor: alice.session!.subject,
    document_id: doc.document_id,
    purpose: "double-click test",
  });
  await alice.refresh();
  await alice.approve(fresh.request_id);
  await alice.approve(fresh.request_id); // second decision hits 409 and reconciles
  assert.equal(alice.notice, null);
});

test("history view row count matches the subject-filtered ledger", async () => {
  const client = new ApiClient(BASE);
  const store = new WalletStore(client);
  await store.signIn("alice", "alice-pass");
  await store.loadHistory();
  const raw = await client.ledger({ actor: store.session!.subject });
  assert.equal(store.history.length, raw.entries.length);
  assert.ok(store.history.length > 0);

  const { renderHistory } = await import("../src/render.js");
  const html = renderHistory(store.history);
  const rows = (html.match(/history-row/g) ?? []).length;
  assert.equal(rows, raw.entries.length);
});

test("event stream delivers a new pending request to the wallet", async () => {
  const alice = new WalletStore(new ApiClient(BASE));
  await alice.signIn("alice", "alice-pass");
  const aliceClient = new ApiClient(BASE);
  await aliceClient.signIn("alice", "alice-pass");
  // drain the existing inbox first
  const loop = new EventLoop(aliceClient, alice, { longPollSeconds: 0, fallbackMs: 100 });
  const drain = await aliceClient.events(0, 0);
  await alice.applyEvents([], drain.next);

  const employer = new ApiClient(BASE);
  await employer.signIn("employer", "employer-pass");
  const doc = alice.documents[0];
  await employer.createRequest({
    grantor: alice.session!.subject,
    document_id: doc.document_id,
    purpose: "live update test",
  });

  const applied = await loop.tick();
  assert.ok(applied >= 1, "request_pending event arrives on the stream");
  assert.ok(
    alice.pending.some((c) => c.purpose === "live update test"),
    "reconciled card appears",
  );
});

test("ledger verifies end to end", async () => {
  const client = new ApiClient(BASE);
  const verdict = await client.verifyLedger();
  assert.equal(verdict.ok, true);
});
