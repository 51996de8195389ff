// Wire shapes of the manager API this console consumes. Field names match
// the JSON the server emits; do not rename.

export interface MtSummary {
  mtid: string;
  type: string | null;
  approval: string;
  connection: string;
  last_seen: number | null;
}

export interface MtDetail {
  mtid: string;
  agentid: string | null;
  approval: string;
  connection: string;
  last_seen: number | null;
  attributes: Record<string, unknown>;
  readings: string[];
}

export interface Admission {
  agentid: string;
  state: string;
  approved_by: string | null;
  approved_at: number | null;
}

export interface SecurityProfile {
  mtid: string;
  authorized_entities: string[];
  secure_only: boolean;
  owner: string;
}

export interface TimeWindow {
  days: number[];  // 0 = Monday .. 6 = Sunday
  start: number;   // minute of day, inclusive
  end: number;     // minute of day, exclusive
}

export interface Policy {
  id: number;
  mtid: string;
  requester: string;  // exact appid or "*"
  windows: TimeWindow[];
  zone: string | null;
  action: "disclose" | "deny";
  level: number;
}

export interface LocationValue {
  path: string[];
  lat: number;
  lon: number;
}

export interface ReadingResponse {
  mtid: string;
  name: string;
  value: unknown;
  ts?: number;
  src?: string;
  live?: boolean;
}

export interface AlertEntry {
  mtid: string;
  seq: number;
  entries: { name: string; value: unknown; ts?: number }[];
  received_at: number;
}

export interface HierarchyNode {
  name: string;
  lat: number;
  lon: number;
  children?: HierarchyNode[];
}

export interface ApiError {
  error: string;
  detail: string;
}

export function isLocationValue(v: unknown): v is LocationValue {
  return typeof v === "object" && v !== null && Array.isArray((v as any).path);
}

/** Flatten the region tree into name -> depth (root depth 1). */
export function regionDepths(root: HierarchyNode): Map<string, number> {
  const out = new Map<string, number>();
  const walk = (node: HierarchyNode, depth: number) => {
    out.set(node.name, depth);
    for (const child of node.children ?? []) walk(child, depth + 1);
  };
  walk(root, 1);
  return out;
}

export function maxDepth(root: HierarchyNode): number {
  let deepest = 0;
  for (const depth of regionDepths(root).values()) deepest = Math.max(deepest, depth);
  return deepest;
}
