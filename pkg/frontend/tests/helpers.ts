// Fake fetch for the client tests: routes are matched by "METHOD path"
// against the URL's path, every call is recorded for assertions.

export interface Recorded {
  method: string;
  url: string;
  path: string;
  base: string;
  headers: Record<string, string>;
  body: unknown;
}

export type Handler = (call: Recorded) => { status: number; body?: unknown } | Promise<{ status: number; body?: unknown }>;

export class FakeFetch {
  calls: Recorded[] = [];
  private routes = new Map<string, Handler>();

  on(method: string, path: string, handler: Handler): void {
    this.routes.set(`${method} ${path}`, handler);
  }

  json(method: string, path: string, status: number, body: unknown): void {
    this.on(method, path, () => ({ status, body }));
  }

  get fn() {
    return async (url: string, init: RequestInit): Promise<Response> => {
      const parsed = new URL(url);
      const headers: Record<string, string> = {};
      for (const [k, v] of Object.entries(init.headers ?? {})) {
        headers[k.toLowerCase()] = v as string;
      }
      const call: Recorded = {
        method: init.method ?? "GET",
        url,
        path: parsed.pathname + parsed.search,
        base: parsed.origin,
        headers,
        body: init.body ? JSON.parse(init.body as string) : undefined,
      };
      this.calls.push(call);
      const handler = this.routes.get(`${call.method} ${parsed.pathname}`);
      if (!handler) {
        return new Response(JSON.stringify({ error: "NotFound", detail: call.path }),
          { status: 404, headers: { "content-type": "application/json" } });
      }
      const out = await handler(call);
      return new Response(out.body === undefined ? "" : JSON.stringify(out.body),
        { status: out.status, headers: { "content-type": "application/json" } });
    };
  }
}
