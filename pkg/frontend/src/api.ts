/**
 * Gateway API client.
 *
 * Wraps the HTTP/JSON endpoints of one interactive-layer gateway. Every
 * mutating call measures client-side round-trip latency (response
 * received minus request sent) — exactly the number the latency badges
 * display.
 */

export interface Envelope<T = any> {
  request_id: string;
  status: number;
  body: T;
  t_server_in: number;
  t_server_out: number;
}

export interface StepOutcome {
  httpStatus: number;
  ok: boolean;
  /** Inner handler body (envelope.body.body for mutations). */
  body: any;
  /** Machine-readable rejection reason when not ok. */
  reason: string | null;
  /** Client-measured round trip in milliseconds. */
  latencyMs: number;
  sessionId: string | null;
}

export interface SessionRecord {
  session_id: string;
  status: string;
  stage: string;
  l1_ref: { block_height: number; tx_hash: string } | null;
  operations: number;
}

export interface BlockSummary {
  height: number;
  block_hash: string;
  proposer_id: string;
  tx_count: number;
  quorum_size: number;
}

export interface LedgerPage {
  height: number;
  blocks: BlockSummary[];
}

export interface TxRecord {
  session_id: string;
  originator_id: string;
  operations: number;
  l1_ref: { block_height: number; tx_hash: string };
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(
    public baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
    private clock: () => number = () => performance.now(),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  /** POST a mutation and measure its round trip. */
  async post(path: string, body: Record<string, unknown>): Promise<StepOutcome> {
    const tReq = this.clock();
    const response = await this.fetchFn(this.url(path), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    const tRes = this.clock();
    const envelope = (await response.json()) as Envelope;
    const inner = envelope.body ?? {};
    const handlerBody = inner.body ?? inner;
    return {
      httpStatus: response.status,
      ok: response.status >= 200 && response.status < 300 && inner.status === 'OK',
      body: handlerBody,
      reason: typeof handlerBody?.reason === 'string' ? handlerBody.reason : null,
      latencyMs: tRes - tReq,
      sessionId: inner.session_id ?? handlerBody?.session_id ?? null,
    };
  }

  private async getJson<T>(path: string): Promise<T | null> {
    const response = await this.fetchFn(this.url(path));
    if (response.status === 404) return null;
    if (!response.ok) throw new Error(`GET ${path} -> ${response.status}`);
    const envelope = (await response.json()) as Envelope<T>;
    return envelope.body;
  }

  getSession(sessionId: string): Promise<SessionRecord | null> {
    return this.getJson<SessionRecord>(`/sessions/${encodeURIComponent(sessionId)}`);
  }

  getBlocks(offset = 0, limit = 20): Promise<LedgerPage | null> {
    return this.getJson<LedgerPage>(`/blocks?offset=${offset}&limit=${limit}`);
  }

  getBlock(height: number): Promise<any | null> {
    return this.getJson<any>(`/blocks/${height}`);
  }

  getTx(txHash: string): Promise<TxRecord | null> {
    return this.getJson<TxRecord>(`/tx/${txHash}`);
  }

  async health(): Promise<{ status: string; node_id: string; config: string } | null> {
    try {
      const response = await this.fetchFn(this.url('/healthz'));
      if (!response.ok) return null;
      return (await response.json()) as { status: string; node_id: string; config: string };
    } catch {
      return null;
    }
  }
}
