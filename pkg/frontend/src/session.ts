// Console session state. The token lives in this object and nowhere else:
// it is deliberately excluded from toJSON so no caller can accidentally
// round-trip it through localStorage or a URL.

export interface Endpoints {
  manager: string;          // base URL of the manager API
  moms?: string;            // optional MoMs base, preferred for MT routing
  plaintextProbe?: string;  // optional http:// base for channel what-ifs
}

export class ConsoleSession {
  endpoints: Endpoints;
  pollMs: number;
  private token: string | null = null;

  constructor(endpoints: Endpoints, pollMs = 1000) {
    this.endpoints = { ...endpoints, manager: stripSlash(endpoints.manager) };
    if (this.endpoints.moms) this.endpoints.moms = stripSlash(this.endpoints.moms);
    if (this.endpoints.plaintextProbe) {
      this.endpoints.plaintextProbe = stripSlash(this.endpoints.plaintextProbe);
    }
    this.pollMs = pollMs;
  }

  /** Swap endpoints in place (login form re-submit); token is untouched. */
  configure(endpoints: Endpoints): void {
    this.endpoints = { ...endpoints, manager: stripSlash(endpoints.manager) };
    if (this.endpoints.moms) this.endpoints.moms = stripSlash(this.endpoints.moms);
    if (this.endpoints.plaintextProbe) {
      this.endpoints.plaintextProbe = stripSlash(this.endpoints.plaintextProbe);
    }
  }

  setToken(token: string | null): void {
    this.token = token;
  }

  getToken(): string | null {
    return this.token;
  }

  get authenticated(): boolean {
    return this.token !== null;
  }

  /** Persistable view: endpoints and poll interval only, never the token. */
  toJSON(): { endpoints: Endpoints; pollMs: number } {
    return { endpoints: this.endpoints, pollMs: this.pollMs };
  }
}

function stripSlash(url: string): string {
  return url.replace(/\/+$/, "");
}
