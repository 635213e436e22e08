import assert from "node:assert/strict";
import { test } from "node:test";

import {
  escapeHtml,
  renderConsents,
  renderDashboard,
  renderHistory,
  renderRequests,
  renderSignIn,
} from "../src/render.js";
import { RequestCardView } from "../src/state.js";

const CARD: RequestCardView = {
  requestId: "req-1",
  requesterName: "Employer",
  documentLabel: "PT ssn_certificate",
  purpose: "payroll",
  receivedAt: 420000,
};

test("sign-in view shows the notice when present", () => {
  assert.match(renderSignIn("Wrong password."), /Wrong password\./);
  assert.doesNotMatch(renderSignIn(null), /notice/);
  assert.match(renderSignIn(null), /signin-form/);
});

test("request cards carry approve and deny buttons bound to the id", () => {
  const html = renderRequests([CARD]);
  assert.match(html, /data-action="approve" data-request-id="req-1"/);
  assert.match(html, /data-action="deny" data-request-id="req-1"/);
  assert.match(html, /Employer/);
  assert.match(html, /PT ssn_certificate/);
});

test("empty states render placeholders", () => {
  assert.match(renderRequests([]), /No pending requests/);
  assert.match(renderConsents([]), /No active consents/);
  assert.match(renderHistory([]), /Nothing recorded/);
});

test("history renders one row per entry", () => {
  const entries = [
    { index: 0, timestamp: 0, entry_type: "AuthEvent", body: {}, entry_hash: "00" },
    { index: 3, timestamp: 9000, entry_type: "ConsentGranted", body: {}, entry_hash: "01" },
  ];
  const html = renderHistory(entries);
  assert.equal((html.match(/history-row/g) ?? []).length, entries.length);
  assert.match(html, /ConsentGranted/);
});

test("only active consents are listed and offer revoke", () => {
  const consents = [
    { consent_id: "c1", grantor: "aa", grantee: "bb".repeat(16), document_id: "d1", scope: "read", status: "active" as const, granted_at: 0, expires_at: null },
    { consent_id: "c2", grantor: "aa", grantee: "cc".repeat(16), document_id: "d2", scope: "read", status: "revoked" as const, granted_at: 0, expires_at: null },
  ];
  const html = renderConsents(consents);
  assert.match(html, /data-consent-id="c1"/);
  assert.doesNotMatch(html, /data-consent-id="c2"/);
  assert.match(html, /data-action="revoke"/);
});

test("markup from the server is escaped", () => {
  assert.equal(escapeHtml("<img>&\"x\""), "&lt;img&gt;&amp;&quot;x&quot;");
  const sneaky = { ...CARD, purpose: "<script>alert(1)</script>" };
  assert.doesNotMatch(renderRequests([sneaky]), /<script>/);
});

test("dashboard composes all sections", () => {
  const html = renderDashboard(
    { subject: "aa", displayName: "Alice", expiresAt: 100 },
    [CARD],
    [],
    [],
    [],
    null,
  );
  assert.match(html, /Wallet of Alice/);
  assert.match(html, /Access requests/);
  assert.match(html, /Documents/);
  assert.match(html, /Consents/);
  assert.match(html, /History/);
  assert.match(html, /data-action="signout"/);
});
