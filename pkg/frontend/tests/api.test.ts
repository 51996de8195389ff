import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ConsoleSession } from "../src/session.js";
import { FakeFetch } from "./helpers.js";

const MANAGER = "https://manager.test:8443";
const MOMS = "https://moms.test:9443";

function setup(moms = true) {
  const session = new ConsoleSession({
    manager: MANAGER + "/",  // trailing slash must be tolerated
    moms: moms ? MOMS : undefined,
    plaintextProbe: "http://manager.test:8080",
  });
  session.setToken("tok-abc");
  const fake = new FakeFetch();
  const api = new ApiClient(session, fake.fn);
  return { session, fake, api };
}

describe("routing", () => {
  it("prefers the MoMs for MT-scoped paths and the manager for the rest", async () => {
    const { fake, api } = setup();
    fake.json("GET", "/mt/mt-1/Temperature", 200, { mtid: "mt-1", name: "Temperature", value: 20 });
    fake.json("GET", "/agents/pending", 200, { pending: [] });
    fake.json("GET", "/policies/mt-1", 200, { policies: [] });
    await api.readAttribute("mt-1", "Temperature");
    await api.pendingAgents();
    await api.getPolicies("mt-1");
    expect(fake.calls.map((c) => c.base)).toEqual([MOMS, MANAGER, MOMS]);
  });

  it("falls back to the manager when no MoMs is configured", async () => {
    const { fake, api } = setup(false);
    fake.json("GET", "/mt/mt-1/Temperature", 200, {});
    await api.readAttribute("mt-1", "Temperature");
    expect(fake.calls[0].base).toBe(MANAGER);
  });

  it("honours a per-request base override", async () => {
    const { fake, api } = setup();
    fake.json("GET", "/mt/mt-1/Type", 200, {});
    await api.readAttribute("mt-1", "Type", {}, { base: "http://manager.test:8080" });
    expect(fake.calls[0].base).toBe("http://manager.test:8080");
  });
});

describe("auth and queries", () => {
  it("sends the session token as a bearer header", async () => {
    const { fake, api } = setup();
    fake.json("GET", "/agents/pending", 200, { pending: [] });
    await api.pendingAgents();
    expect(fake.calls[0].headers["authorization"]).toBe("Bearer tok-abc");
  });

  it("omits the header when no token is set", async () => {
    const { session, fake, api } = setup();
    session.setToken(null);
    fake.json("GET", "/", 200, {});
    await api.health();
    expect("authorization" in fake.calls[0].headers).toBe(false);
  });

  it("lets a probe token override the session token", async () => {
    const { fake, api } = setup();
    fake.json("GET", "/mt/mt-1/Type", 200, {});
    await api.readAttribute("mt-1", "Type", {}, { token: "probe-tok" });
    expect(fake.calls[0].headers["authorization"]).toBe("Bearer probe-tok");
  });

  it("encodes query parameters and skips undefined ones", async () => {
    const { fake, api } = setup();
    fake.json("GET", "/mt/mt-1/MobileLocation", 200, {});
    await api.readAttribute("mt-1", "MobileLocation", { at: 12.5, live: undefined });
    expect(fake.calls[0].path).toBe("/mt/mt-1/MobileLocation?at=12.5");
  });

  it("surfaces error bodies and network failures", async () => {
    const { fake, api } = setup();
    fake.json("GET", "/mt/mt-1/Temperature", 403, { error: "Forbidden", detail: "nope" });
    const denied = await api.readAttribute("mt-1", "Temperature");
    expect(denied.ok).toBe(false);
    expect(denied.status).toBe(403);
    expect(denied.error).toBe("Forbidden");
    expect(denied.detail).toBe("nope");

    const down = new ApiClient(
      new ConsoleSession({ manager: MANAGER }),
      () => Promise.reject(new TypeError("connection refused")));
    const out = await down.health();
    expect(out.status).toBe(0);
    expect(out.error).toBe("Unreachable");
  });
});

describe("mutation serialization", () => {
  it("queues writes to the same MT in order", async () => {
    const { fake, api } = setup();
    const order: string[] = [];
    let release!: () => void;
    const gate = new Promise<void>((res) => { release = res; });
    fake.on("PUT", "/profiles/mt-1", async (call) => {
      order.push("start:" + (call.body as any).owner);
      if ((call.body as any).owner === "first") await gate;
      order.push("end:" + (call.body as any).owner);
      return { status: 200, body: {} };
    });
    const p1 = api.putProfile("mt-1", {
      authorized_entities: [], secure_only: false, owner: "first",
    });
    const p2 = api.putProfile("mt-1", {
      authorized_entities: [], secure_only: false, owner: "second",
    });
    // the second PUT must not even start until the first resolves
    await new Promise((res) => setTimeout(res, 10));
    expect(order).toEqual(["start:first"]);
    release();
    await Promise.all([p1, p2]);
    expect(order).toEqual(["start:first", "end:first", "start:second", "end:second"]);
  });

  it("lets writes to different MTs interleave", async () => {
    const { fake, api } = setup();
    const started: string[] = [];
    let release!: () => void;
    const gate = new Promise<void>((res) => { release = res; });
    fake.on("PUT", "/profiles/mt-1", async () => { started.push("mt-1"); await gate; return { status: 200, body: {} }; });
    fake.on("PUT", "/profiles/mt-2", async () => { started.push("mt-2"); return { status: 200, body: {} }; });
    const p1 = api.putProfile("mt-1", { authorized_entities: [], secure_only: false, owner: "o" });
    const p2 = api.putProfile("mt-2", { authorized_entities: [], secure_only: false, owner: "o" });
    await new Promise((res) => setTimeout(res, 10));
    expect(started).toEqual(["mt-1", "mt-2"]);
    release();
    await Promise.all([p1, p2]);
  });

  it("keeps the chain alive after a failed mutation", async () => {
    const { fake, api } = setup();
    fake.json("POST", "/agents/ag-1/approve", 409, { error: "AlreadyDecided", detail: "" });
    fake.json("POST", "/agents/ag-1/revoke", 200, { agentid: "ag-1", state: "revoked" });
    const first = await api.approveAgent("ag-1");
    expect(first.status).toBe(409);
    const second = await api.revokeAgent("ag-1");
    expect(second.status).toBe(200);
  });
});

describe("credentials and session hygiene", () => {
  it("sends the register key header only when given", async () => {
    const { fake, api } = setup();
    fake.json("POST", "/apps", 201, { appid: "a", secret: "s", role: "iot_app" });
    await api.registerApp("a", "iot_app", "op-key");
    await api.registerApp("a", "iot_app");
    expect(fake.calls[0].headers["x-register-key"]).toBe("op-key");
    expect("x-register-key" in fake.calls[1].headers).toBe(false);
    expect(fake.calls[0].body).toEqual({ appid: "a", role: "iot_app" });
  });

  it("never includes the token when the session is serialized", () => {
    const session = new ConsoleSession({ manager: MANAGER });
    session.setToken("super-secret");
    const dumped = JSON.stringify(session);
    expect(dumped).not.toContain("super-secret");
    expect(JSON.parse(dumped)).toEqual({
      endpoints: { manager: MANAGER }, pollMs: 1000,
    });
  });
});
