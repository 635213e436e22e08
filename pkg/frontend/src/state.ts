/**
 * Wallet store: one session plus the reconciled views the UI renders.
 *
 * Decisions are optimistic — a card disappears the moment the user acts — but
 * the server stays authoritative: every mutation is followed by a refresh, and
 * a 409 (decided elsewhere) just reconciles. Responses are applied in arrival
 * order; stale refreshes are dropped via a generation counter.
 */

import {
  ApiClient,
  ApiError,
  ConsentView,
  DocumentMeta,
  LedgerEntryView,
  PendingRequest,
  TokenResponse,
  WalletEvent,
} from "./api.js";

export interface SessionView {
  subject: string;
  displayName: string;
  expiresAt: number;
}

export interface RequestCardView {
  requestId: string;
  requesterName: string;
  documentLabel: string;
  purpose: string;
  receivedAt: number;
}

export type StoreListener = (store: WalletStore) => void;

export class WalletStore {
  session: SessionView | null = null;
  pending: RequestCardView[] = [];
  documents: DocumentMeta[] = [];
  consents: ConsentView[] = [];
  history: LedgerEntryView[] = [];
  notice: string | null = null;
  eventCursor = 0;

  private generation = 0;
  private names = new Map<string, string>();
  private listeners: StoreListener[] = [];

  constructor(private readonly client: ApiClient) {}

  onChange(listener: StoreListener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this);
  }

  isExpired(nowMs: number): boolean {
    return this.session !== null && nowMs >= this.session.expiresAt;
  }

  // -- session -----------------------------------------------------------------

  async signIn(username: string, password: string): Promise<void> {
    let token: TokenResponse;
    try {
      token = await this.client.signIn(username, password);
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        this.notice = "Unknown account or wrong password.";
        this.emit();
        throw error;
      }
      this.notice = "Node unreachable — retry in a moment.";
      this.emit();
      throw error;
    }
    this.session = {
      subject: token.subject,
      displayName: await this.displayName(token.subject),
      expiresAt: token.expires_at,
    };
    this.notice = null;
    await this.refresh();
  }

  signOut(): void {
    this.client.signOut();
    this.session = null;
    this.pending = [];
    this.documents = [];
    this.consents = [];
    this.history = [];
    this.emit();
  }

  private async displayName(idHex: string): Promise<string> {
    const cached = this.names.get(idHex);
    if (cached) return cached;
    try {
      const identity = await this.client.identity(idHex);
      this.names.set(idHex, identity.display_name);
      return identity.display_name;
    } catch {
      return idHex.slice(0, 8);
    }
  }

  // -- reconciliation -------------------------------------------------------------

  async refresh(): Promise<void> {
    if (!this.session) return;
    const generation = ++this.generation;
    const [requests, documents, consents] = await Promise.all([
      this.client.requests(),
      this.client.documents(),
      this.client.consents(),
    ]);
    if (generation !== this.generation) return; // a newer refresh already landed
    this.documents = documents.documents;
    this.consents = consents.granted;
    this.pending = [];
    for (const request of requests.pending) {
      this.pending.push(await this.toCard(request));
    }
    this.emit();
  }

  private async toCard(request: PendingRequest): Promise<RequestCardView> {
    const doc = this.documents.find((d) => d.document_id === request.document_id);
    const label = doc
      ? `${doc.schema_ref[0]} ${doc.schema_ref[1]}`
      : request.document_id ?? (request.doc_class ? request.doc_class.join(" ") : "any");
    return {
      requestId: request.request_id,
      requesterName: await this.displayName(request.requester),
      documentLabel: label,
      purpose: request.purpose,
      receivedAt: request.requested_at,
    };
  }

  async loadHistory(): Promise<void> {
    if (!this.session) return;
    const response = await this.client.ledger({ actor: this.session.subject });
    this.history = response.entries;
    this.emit();
  }

  // -- decisions ---------------------------------------------------------------------

  async approve(requestId: string, expiresAt?: number): Promise<void> {
    this.pending = this.pending.filter((card) => card.requestId !== requestId);
    this.emit(); // optimistic
    try {
      await this.client.approveRequest(requestId, expiresAt ? { expires_at: expiresAt } : {});
    } catch (error) {
      if (!(error instanceof ApiError && error.status === 409)) {
        this.notice = error instanceof Error ? error.message : String(error);
      }
    }
    await this.refresh(); // server is authoritative either way
  }

  async deny(requestId: string): Promise<void> {
    this.pending = this.pending.filter((card) => card.requestId !== requestId);
    this.emit();
    try {
      await this.client.denyRequest(requestId);
    } catch (error) {
      if (!(error instanceof ApiError && error.status === 409)) {
        this.notice = error instanceof Error ? error.message : String(error);
      }
    }
    await this.refresh();
  }

  async revoke(consentId: string): Promise<void> {
    try {
      await this.client.revokeConsent(consentId);
    } catch (error) {
      this.notice = error instanceof Error ? error.message : String(error);
    }
    await this.refresh();
  }

  // -- live updates ----------------------------------------------------------------------

  async applyEvents(events: WalletEvent[], next: number): Promise<void> {
    this.eventCursor = next;
    if (events.some((e) => ["request_pending", "consent_granted", "consent_revoked"].includes(e.kind))) {
      await this.refresh();
    }
  }
}
