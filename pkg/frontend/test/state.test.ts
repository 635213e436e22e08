import assert from "node:assert/strict";
import { test } from "node:test";

import { ApiClient, FetchLike, PendingRequest } from "../src/api.js";
import { WalletStore } from "../src/state.js";

const ALICE = "aa".repeat(32);
const EMPLOYER = "bb".repeat(32);

interface NodeState {
  pending: PendingRequest[];
  approved: string[];
  denied: string[];
  failNext?: { status: number; body: unknown };
}

/** Scripted node: answers like the real API and records decisions. */
function scriptedNode(state: NodeState): FetchLike {
  return async (url, init) => {
    const respond = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), { status });
    if (state.failNext) {
      const { status, body } = state.failNext;
      state.failNext = undefined;
      return respond(status, body);
    }
    if (url.endsWith("/auth/token")) {
      return respond(200, {
        access_token: "tok.session",
        token_type: "bearer",
        subject: ALICE,
        expires_at: 1_800_000,
        scopes: ["documents:read", "documents:write"],
      });
    }
    if (url.includes("/identities/")) {
      const id = url.split("/identities/")[1];
      return respond(200, {
        identity_id: id,
        display_name: id === ALICE ? "Alice" : "Employer",
        role: "citizen",
      });
    }
    if (url.includes("/requests/") && url.endsWith("/approve")) {
      const requestId = url.split("/requests/")[1].split("/")[0];
      state.approved.push(requestId);
      state.pending = state.pending.filter((r) => r.request_id !== requestId);
      return respond(200, { consent_id: requestId, status: "active" });
    }
    if (url.includes("/requests/") && url.endsWith("/deny")) {
      const requestId = url.split("/requests/")[1].split("/")[0];
      state.denied.push(requestId);
      state.pending = state.pending.filter((r) => r.request_id !== requestId);
      return respond(200, { request_id: requestId, state: "denied" });
    }
    if (url.includes("/requests")) {
      return respond(200, { pending: state.pending, mine: [] });
    }
    if (url.includes("/documents")) {
      return respond(200, { documents: [] });
    }
    if (url.includes("/consents")) {
      return respond(200, { granted: [], received: [] });
    }
    if (url.includes("/ledger")) {
      return respond(200, { entries: [{ index: 0, timestamp: 0, entry_type: "AuthEvent", body: {}, entry_hash: "00" }] });
    }
    if (url.includes("/events")) {
      return respond(200, { events: [], next: 0 });
    }
    return respond(404, { error: "not_found", detail: url });
  };
}

function pendingFixture(id: string): PendingRequest {
  return {
    request_id: id,
    requester: EMPLOYER,
    grantor: ALICE,
    document_id: "doc-1",
    doc_class: null,
    purpose: "payroll",
    state: "pending",
    requested_at: 1000,
  };
}

async function signedInStore(state: NodeState): Promise<WalletStore> {
  const store = new WalletStore(new ApiClient("http://node.test", scriptedNode(state)));
  await store.signIn("alice", "alice-pass");
  return store;
}

test("sign-in populates the session and pending cards", async () => {
  const state: NodeState = { pending: [pendingFixture("req-1")], approved: [], denied: [] };
  const store = await signedInStore(state);
  assert.equal(store.session?.displayName, "Alice");
  assert.equal(store.pending.length, 1);
  assert.equal(store.pending[0].requesterName, "Employer");
});

test("invalid credentials set a notice and keep no session", async () => {
  const state: NodeState = {
    pending: [],
    approved: [],
    denied: [],
    failNext: { status: 401, body: { error: "invalid_credentials", detail: "no" } },
  };
  const store = new WalletStore(new ApiClient("http://node.test", scriptedNode(state)));
  await assert.rejects(() => store.signIn("alice", "wrong"));
  assert.equal(store.session, null);
  assert.match(store.notice ?? "", /password/);
});

test("approve removes the card optimistically and reconciles", async () => {
  const state: NodeState = { pending: [pendingFixture("req-1")], approved: [], denied: [] };
  const store = await signedInStore(state);
  await store.approve("req-1");
  assert.deepEqual(state.approved, ["req-1"]);
  assert.equal(store.pending.length, 0);
});

test("a 409 already-decided approve reconciles silently", async () => {
  const state: NodeState = { pending: [pendingFixture("req-1")], approved: [], denied: [] };
  const store = await signedInStore(state);
  state.failNext = { status: 409, body: { error: "already_decided", detail: "denied" } };
  state.pending = [];
  await store.approve("req-1");
  assert.equal(store.pending.length, 0);
  assert.equal(store.notice, null);
});

test("deny records the decision and drops the card", async () => {
  const state: NodeState = { pending: [pendingFixture("req-9")], approved: [], denied: [] };
  const store = await signedInStore(state);
  await store.deny("req-9");
  assert.deepEqual(state.denied, ["req-9"]);
  assert.equal(store.pending.length, 0);
});

test("request_pending event triggers a refresh", async () => {
  const state: NodeState = { pending: [], approved: [], denied: [] };
  const store = await signedInStore(state);
  assert.equal(store.pending.length, 0);
  state.pending = [pendingFixture("req-live")];
  await store.applyEvents([{ kind: "request_pending", at: 5 }], 1);
  assert.equal(store.eventCursor, 1);
  assert.equal(store.pending.length, 1);
});

test("history mirrors the subject-filtered ledger response", async () => {
  const state: NodeState = { pending: [], approved: [], denied: [] };
  const store = await signedInStore(state);
  await store.loadHistory();
  assert.equal(store.history.length, 1);
});

test("session expiry is detected", async () => {
  const state: NodeState = { pending: [], approved: [], denied: [] };
  const store = await signedInStore(state);
  assert.equal(store.isExpired(1_799_000), false);
  assert.equal(store.isExpired(1_801_000), true);
});

test("sign-out clears token and views", async () => {
  const state: NodeState = { pending: [pendingFixture("req-1")], approved: [], denied: [] };
  const store = await signedInStore(state);
  store.signOut();
  assert.equal(store.session, null);
  assert.equal(store.pending.length, 0);
});
