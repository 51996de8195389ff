// What-if previews register a real iot_app and replay reads through the
// live security and privacy gates, so the panel can never drift from
// what enforcement actually does.  The probe's appid is shown to the
// operator so they can grant or withhold it like any other entity.

import type { ApiClient, ApiResult } from "./api.js";
import type { ReadingResponse } from "./model.js";
import { isLocationValue } from "./model.js";

export type PreviewOutcome =
  | { kind: "disclosed"; path: string[]; lat: number; lon: number }
  | { kind: "denied"; detail: string }
  | { kind: "error"; message: string };

export interface ProbeOptions {
  /** Operator key forwarded to app registration when the manager requires one. */
  registerKey?: string;
  /** Suffix source, injectable for tests. */
  randSuffix?: () => string;
}

interface ProbeReadOptions {
  at?: number;
  attr?: string;
  /** Hit this listener instead of the session default (channel probes). */
  base?: string;
}

const REGISTER_ATTEMPTS = 5;

function defaultSuffix(): string {
  return Math.random().toString(36).slice(2, 8);
}

export class WhatIfProbe {
  private registeredAppid: string | null = null;
  private secret: string | null = null;
  private token: string | null = null;

  constructor(private api: ApiClient, private opts: ProbeOptions = {}) {}

  get appid(): string | null {
    return this.registeredAppid;
  }

  /** Register once and mint a token; returns an error message or null. */
  async ensureRegistered(): Promise<string | null> {
    if (this.token !== null) return null;
    if (this.registeredAppid === null || this.secret === null) {
      const err = await this.register();
      if (err !== null) return err;
    }
    return this.mint();
  }

  private async register(): Promise<string | null> {
    const suffix = this.opts.randSuffix ?? defaultSuffix;
    for (let attempt = 0; attempt < REGISTER_ATTEMPTS; attempt++) {
      const appid = `console-probe-${suffix()}`;
      const resp = await this.api.registerApp(appid, "iot_app", this.opts.registerKey);
      if (resp.ok && resp.body) {
        this.registeredAppid = resp.body.appid;
        this.secret = resp.body.secret;
        return null;
      }
      if (resp.status === 409) continue;  // appid taken, roll a fresh suffix
      return resp.detail || resp.error || `registration failed (${resp.status})`;
    }
    return "could not find a free probe appid";
  }

  private async mint(): Promise<string | null> {
    if (this.registeredAppid === null || this.secret === null) {
      return "probe is not registered";
    }
    const resp = await this.api.mintToken(this.registeredAppid, this.secret);
    if (resp.ok && resp.body) {
      this.token = resp.body.token;
      return null;
    }
    return resp.detail || resp.error || `token mint failed (${resp.status})`;
  }

  /**
   * Read an attribute as the probe app.  Returns the raw result; a 401
   * (expired probe token) is retried once after re-minting.
   */
  async probeRead(mtid: string, name: string,
                  opts: ProbeReadOptions = {}): Promise<ApiResult<ReadingResponse>> {
    const err = await this.ensureRegistered();
    if (err !== null) {
      return { status: 0, ok: false, body: null, error: err };
    }
    const query = opts.at === undefined ? {} : { at: opts.at };
    const send = () => this.api.readAttribute(mtid, name, query, {
      token: this.token ?? undefined,
      base: opts.base,
    });
    let resp = await send();
    if (resp.status === 401) {
      this.token = null;
      if ((await this.mint()) === null) resp = await send();
    }
    return resp;
  }

  /** Run the disclosure gates and classify the answer for the preview panel. */
  async previewLocation(mtid: string, opts: ProbeReadOptions = {}): Promise<PreviewOutcome> {
    const resp = await this.probeRead(mtid, opts.attr ?? "MobileLocation", opts);
    if (resp.ok && resp.body && isLocationValue((resp.body as any).value)) {
      const v = (resp.body as any).value;
      return { kind: "disclosed", path: v.path, lat: v.lat, lon: v.lon };
    }
    if (resp.status === 403) {
      // the time-probe gate and the policy gate both answer 403; keep the
      // server's wording so the operator can tell them apart
      return { kind: "denied", detail: resp.detail || resp.error || "forbidden" };
    }
    return { kind: "error", message: resp.detail || resp.error || `status ${resp.status}` };
  }
}
