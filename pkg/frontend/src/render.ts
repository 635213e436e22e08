/**
 * Pure render functions: state in, HTML string out. No DOM access here, so
 * every view is unit-testable; app.ts owns mounting and event wiring.
 */

import { ConsentView, DocumentMeta, LedgerEntryView } from "./api.js";
import { RequestCardView, SessionView } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function timestamp(ms: number): string {
  return `${(ms / 1000).toFixed(0)}s`;
}

export function renderSignIn(notice: string | null): string {
  return `
    <section class="signin">
      <h1>civicnet wallet</h1>
      ${notice ? `<p class="notice">${escapeHtml(notice)}</p>` : ""}
      <form id="signin-form">
        <input name="username" placeholder="username" autocomplete="username" />
        <input name="password" type="password" placeholder="password" autocomplete="current-password" />
        <button type="submit">Sign in</button>
      </form>
    </section>`;
}

export function renderRequestCard(card: RequestCardView): string {
  return `
    <li class="request-card" data-request-id="${escapeHtml(card.requestId)}">
      <strong>${escapeHtml(card.requesterName)}</strong>
      asks for <em>${escapeHtml(card.documentLabel)}</em>
      <span class="purpose">${escapeHtml(card.purpose)}</span>
      <span class="received-at">${timestamp(card.receivedAt)}</span>
      <button data-action="approve" data-request-id="${escapeHtml(card.requestId)}">Approve</button>
      <button data-action="deny" data-request-id="${escapeHtml(card.requestId)}">Deny</button>
    </li>`;
}

export function renderRequests(cards: RequestCardView[]): string {
  if (cards.length === 0) {
    return `<p class="empty">No pending requests.</p>`;
  }
  return `<ul class="requests">${cards.map(renderRequestCard).join("")}</ul>`;
}

export function renderDocuments(documents: DocumentMeta[]): string {
  if (documents.length === 0) {
    return `<p class="empty">No documents yet — request one from an authority.</p>`;
  }
  const rows = documents.map(
    (doc) => `
      <li class="document" data-document-id="${escapeHtml(doc.document_id)}">
        <em>${escapeHtml(doc.schema_ref.join(" "))}</em>
        <code>${escapeHtml(doc.document_id)}</code>
      </li>`,
  );
  return `<ul class="documents">${rows.join("")}</ul>`;
}

export function renderConsents(consents: ConsentView[]): string {
  const active = consents.filter((consent) => consent.status === "active");
  if (active.length === 0) {
    return `<p class="empty">No active consents.</p>`;
  }
  const rows = active.map(
    (consent) => `
      <li class="consent" data-consent-id="${escapeHtml(consent.consent_id)}">
        <code>${escapeHtml(consent.document_id)}</code> → ${escapeHtml(consent.grantee.slice(0, 8))}
        (${escapeHtml(consent.scope)})
        <button data-action="revoke" data-consent-id="${escapeHtml(consent.consent_id)}">Revoke</button>
      </li>`,
  );
  return `<ul class="consents">${rows.join("")}</ul>`;
}

export function renderHistory(entries: LedgerEntryView[]): string {
  if (entries.length === 0) {
    return `<p class="empty">Nothing recorded for this account yet.</p>`;
  }
  const rows = entries.map(
    (entry) => `
      <tr class="history-row">
        <td>${entry.index}</td>
        <td>${escapeHtml(entry.entry_type)}</td>
        <td>${timestamp(entry.timestamp)}</td>
      </tr>`,
  );
  return `
    <table class="history">
      <thead><tr><th>#</th><th>event</th><th>at</th></tr></thead>
      <tbody>${rows.join("")}</tbody>
    </table>`;
}

export function renderDashboard(
  session: SessionView,
  cards: RequestCardView[],
  documents: DocumentMeta[],
  consents: ConsentView[],
  history: LedgerEntryView[],
  notice: string | null,
): string {
  return `
    <header>
      <h1>Wallet of ${escapeHtml(session.displayName)}</h1>
      <button data-action="signout">Sign out</button>
    </header>
    ${notice ? `<p class="notice">${escapeHtml(notice)}</p>` : ""}
    <main>
      <section><h2>Access requests</h2>${renderRequests(cards)}</section>
      <section><h2>Documents</h2>${renderDocuments(documents)}</section>
      <section><h2>Consents</h2>${renderConsents(consents)}</section>
      <section><h2>History</h2>${renderHistory(history)}</section>
    </main>`;
}
