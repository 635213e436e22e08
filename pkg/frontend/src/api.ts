/**
 * Typed REST client for the civicnet node API.
 *
 * The client holds the bearer token for one session, never persisting it;
 * every call returns parsed JSON or throws ApiError with the node's error
 * code and HTTP status. A fetch implementation is injectable for tests.
 */

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface TokenResponse {
  access_token: string;
  token_type: string;
  subject: string;
  expires_at: number;
  scopes: string[];
}

export interface PendingRequest {
  request_id: string;
  requester: string;
  grantor: string;
  document_id: string | null;
  doc_class: [string, string] | null;
  purpose: string;
  state: "pending" | "approved" | "denied";
  requested_at: number;
}

export interface DocumentMeta {
  document_id: string;
  schema_ref: [string, string];
  issuer: string;
  subject: string | null;
  envelope_cid: string;
  payload_hash: string;
  issued_at: number;
}

export interface ConsentView {
  consent_id: string;
  grantor: string;
  grantee: string;
  document_id: string;
  scope: string;
  status: "active" | "revoked" | "expired";
  granted_at: number;
  expires_at: number | null;
}

export interface LedgerEntryView {
  index: number;
  timestamp: number;
  entry_type: string;
  body: Record<string, unknown>;
  entry_hash: string;
}

export interface WalletEvent {
  kind: string;
  at: number;
  [key: string]: unknown;
}

export interface IdentityView {
  identity_id: string;
  display_name: string;
  role: string;
}

export interface AnalyticsView {
  total_entries: number;
  counts_by_type: Record<string, number>;
  counts_by_actor: Record<string, number>;
  mean_grant_latency_s: number;
  max_grant_latency_s: number;
  denied_count: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${status} ${code}: ${detail}`);
  }
}

export class ApiClient {
  token: string | null = null;

  constructor(
    public readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async call<T>(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<T> {
    let url = this.baseUrl.replace(/\/$/, "") + path;
    if (query && Object.keys(query).length > 0) {
      url += "?" + new URLSearchParams(query).toString();
    }
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const response = await this.fetchFn(url, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = (await response.json()) as Record<string, unknown>;
    if (!response.ok) {
      throw new ApiError(
        response.status,
        String(payload["error"] ?? "error"),
        String(payload["detail"] ?? ""),
      );
    }
    return payload as T;
  }

  // -- auth ------------------------------------------------------------------

  async signIn(username: string, password: string): Promise<TokenResponse> {
    const token = await this.call<TokenResponse>("POST", "/auth/token", {
      grant_type: "password",
      username,
      password,
      audience: "wallet",
    });
    this.token = token.access_token;
    return token;
  }

  async exchangeCode(code: string): Promise<TokenResponse> {
    const token = await this.call<TokenResponse>("POST", "/auth/token", {
      grant_type: "authorization_code",
      code,
      audience: "wallet",
    });
    this.token = token.access_token;
    return token;
  }

  signOut(): void {
    this.token = null;
  }

  // -- wallet resources ---------------------------------------------------------

  documents(): Promise<{ documents: DocumentMeta[] }> {
    return this.call("GET", "/documents");
  }

  documentPayload(documentId: string): Promise<{ payload: string }> {
    return this.call("GET", `/documents/${documentId}/payload`);
  }

  requests(): Promise<{ pending: PendingRequest[]; mine: PendingRequest[] }> {
    return this.call("GET", "/requests");
  }

  createRequest(body: {
    grantor: string;
    document_id?: string;
    doc_class?: [string, string];
    purpose?: string;
  }): Promise<PendingRequest> {
    return this.call("POST", "/requests", body);
  }

  approveRequest(
    requestId: string,
    options: { expires_at?: number; scope?: string; document_id?: string } = {},
  ): Promise<ConsentView> {
    return this.call("POST", `/requests/${requestId}/approve`, options);
  }

  denyRequest(requestId: string): Promise<{ request_id: string; state: string }> {
    return this.call("POST", `/requests/${requestId}/deny`, {});
  }

  consents(): Promise<{ granted: ConsentView[]; received: ConsentView[] }> {
    return this.call("GET", "/consents");
  }

  revokeConsent(consentId: string): Promise<{ consent_id: string; status: string }> {
    return this.call("POST", `/consents/${consentId}/revoke`, {});
  }

  identity(idHex: string): Promise<IdentityView> {
    return this.call("GET", `/identities/${idHex}`);
  }

  ledger(query: Record<string, string> = {}): Promise<{ entries: LedgerEntryView[] }> {
    return this.call("GET", "/ledger", undefined, query);
  }

  verifyLedger(): Promise<{ ok: boolean; index?: number; reason?: string }> {
    return this.call("GET", "/ledger/verify");
  }

  analytics(): Promise<AnalyticsView> {
    return this.call("GET", "/analytics");
  }

  search(q: string, kind?: string): Promise<{ results: { id: string; kind: string; label: string }[] }> {
    const query: Record<string, string> = { q };
    if (kind) query["kind"] = kind;
    return this.call("GET", "/search", undefined, query);
  }

  events(since: number, waitSeconds = 0): Promise<{ events: WalletEvent[]; next: number }> {
    const query: Record<string, string> = { since: String(since) };
    if (waitSeconds > 0) query["wait"] = String(waitSeconds);
    return this.call("GET", "/events", undefined, query);
  }
}
