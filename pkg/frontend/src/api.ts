// Typed client for the manager / MoMs REST API.
//
// Reads may fan out, but mutations are serialized per target so two edits
// of the same MT can never interleave on the wire; the UI refetches after
// every mutation instead of applying optimistic state.

import type {
  Admission,
  AlertEntry,
  HierarchyNode,
  MtDetail,
  MtSummary,
  Policy,
  ReadingResponse,
  SecurityProfile,
} from "./model.js";
import type { ConsoleSession } from "./session.js";

export interface ApiResult<T> {
  status: number;
  ok: boolean;
  body: T | null;
  error?: string;
  detail?: string;
}

export interface RequestOptions {
  query?: Record<string, string | number | boolean | undefined>;
  body?: unknown;
  headers?: Record<string, string>;
  /** Use this bearer token instead of the session's (what-if probes). */
  token?: string;
  /** Override the base URL (plaintext channel probes). */
  base?: string;
}

type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

// paths the MoMs forwards by MTID; everything else is manager-local
const ROUTED_ROOTS = new Set(["mt", "profiles", "policies"]);

export class ApiClient {
  private chains = new Map<string, Promise<unknown>>();

  constructor(
    private session: ConsoleSession,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  baseFor(path: string): string {
    const root = path.split("/").filter(Boolean)[0] ?? "";
    const { manager, moms } = this.session.endpoints;
    return ROUTED_ROOTS.has(root) && moms ? moms : manager;
  }

  buildUrl(path: string, opts: RequestOptions = {}): string {
    const base = opts.base ?? this.baseFor(path);
    let url = base + path;
    const pairs: string[] = [];
    for (const [key, value] of Object.entries(opts.query ?? {})) {
      if (value === undefined) continue;
      pairs.push(`${encodeURIComponent(key)}=${encodeURIComponent(String(value))}`);
    }
    if (pairs.length) url += "?" + pairs.join("&");
    return url;
  }

  async request<T>(method: string, path: string,
                   opts: RequestOptions = {}): Promise<ApiResult<T>> {
    const headers: Record<string, string> = { ...opts.headers };
    const token = opts.token ?? this.session.getToken();
    if (token) headers["authorization"] = `Bearer ${token}`;
    const init: RequestInit = { method, headers };
    if (opts.body !== undefined) {
      headers["content-type"] = "application/json";
      init.body = JSON.stringify(opts.body);
    }
    let resp: Response;
    try {
      resp = await this.fetchFn(this.buildUrl(path, opts), init);
    } catch (exc) {
      return { status: 0, ok: false, body: null,
               error: "Unreachable", detail: String(exc) };
    }
    let body: unknown = null;
    const text = await resp.text();
    if (text) {
      try {
        body = JSON.parse(text);
      } catch {
        body = null;
      }
    }
    const out: ApiResult<T> = { status: resp.status, ok: resp.ok, body: body as T };
    if (!resp.ok && body && typeof body === "object") {
      out.error = (body as any).error;
      out.detail = (body as any).detail;
    }
    return out;
  }

  /** Chain fn behind any in-flight mutation for the same key. */
  private serialize<T>(key: string, fn: () => Promise<T>): Promise<T> {
    const prev = this.chains.get(key) ?? Promise.resolve();
    const next = prev.then(fn, fn);
    this.chains.set(key, next.catch(() => undefined));
    return next;
  }

  // -- reads ---------------------------------------------------------------

  health() {
    return this.request<{ managerid: string; mts: number }>("GET", "/");
  }

  hierarchy() {
    return this.request<HierarchyNode>("GET", "/hierarchy");
  }

  listMts() {
    return this.request<{ mts: MtSummary[] }>("GET", "/mt");
  }

  mtDetail(mtid: string) {
    return this.request<MtDetail>("GET", `/mt/${mtid}`);
  }

  readAttribute(mtid: string, name: string,
                query: RequestOptions["query"] = {}, opts: RequestOptions = {}) {
    return this.request<ReadingResponse>(
      "GET", `/mt/${mtid}/${name}`, { ...opts, query });
  }

  alerts(mtid?: string) {
    return this.request<{ alerts: AlertEntry[] }>(
      "GET", "/alerts", { query: mtid ? { mtid } : {} });
  }

  pendingAgents() {
    return this.request<{ pending: Admission[] }>("GET", "/agents/pending");
  }

  getProfile(mtid: string) {
    return this.request<SecurityProfile>("GET", `/profiles/${mtid}`);
  }

  getPolicies(mtid: string) {
    return this.request<{ policies: Policy[] }>("GET", `/policies/${mtid}`);
  }

  // -- mutations (serialized per target) -------------------------------------

  approveAgent(agentid: string) {
    return this.serialize(`agent:${agentid}`, () =>
      this.request<{ agentid: string; state: string }>(
        "POST", `/agents/${agentid}/approve`));
  }

  revokeAgent(agentid: string) {
    return this.serialize(`agent:${agentid}`, () =>
      this.request<{ agentid: string; state: string }>(
        "POST", `/agents/${agentid}/revoke`));
  }

  putProfile(mtid: string, profile: Omit<SecurityProfile, "mtid">) {
    return this.serialize(`mt:${mtid}`, () =>
      this.request<SecurityProfile>("PUT", `/profiles/${mtid}`, { body: profile }));
  }

  putPolicies(mtid: string, policies: Policy[]) {
    return this.serialize(`mt:${mtid}`, () =>
      this.request<{ mtid: string; count: number }>(
        "PUT", `/policies/${mtid}`, { body: { policies } }));
  }

  actuate(mtid: string, name: string, value: unknown) {
    return this.serialize(`mt:${mtid}`, () =>
      this.request<ReadingResponse>(
        "POST", `/mt/${mtid}/actuation`, { body: { name, value } }));
  }

  // -- credentials -----------------------------------------------------------

  registerApp(appid: string, role: string, registerKey?: string) {
    return this.request<{ appid: string; secret: string; role: string }>(
      "POST", "/apps", {
        body: { appid, role },
        headers: registerKey ? { "x-register-key": registerKey } : {},
      });
  }

  mintToken(appid: string, secret: string) {
    return this.request<{ token: string; exp: number; role: string }>(
      "POST", "/tokens", { body: { appid, secret } });
  }
}
