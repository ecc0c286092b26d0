// Typed client for the markmatch HTTP service. The console talks only to
// this API; no similarity math happens client-side.

export interface SegmentResponse {
  segment_id: string
  bbox: [number, number, number, number]
  rle_mask: string
}

export interface RankedMatch {
  rank: number
  alias: string
  softmax_score: number
  raw_logit: number
}

export interface PoolEntry {
  alias: string
  ballot_id: string
}

export interface HeatmapResponse {
  pool_aliases: string[]
  query_aliases: string[]
  cells: number[][]
}

export type Prompt =
  | { kind: 'point'; x: number; y: number }
  | { kind: 'box'; x0: number; y0: number; x1: number; y1: number }

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail)
  }
}

async function jsonOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText
    try {
      const body = await resp.json()
      if (body && typeof body.detail === 'string') detail = body.detail
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail)
  }
  return (await resp.json()) as T
}

export class MarkMatchApi {
  constructor(readonly baseUrl: string) {}

  async uploadBallot(bytes: Uint8Array | ArrayBuffer, contentType: string): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/api/ballots`, {
      method: 'POST',
      headers: { 'Content-Type': contentType },
      body: bytes instanceof Uint8Array ? new Uint8Array(bytes) : bytes,
    })
    const body = await jsonOrThrow<{ ballot_id: string }>(resp)
    return body.ballot_id
  }

  async segmentBallot(ballotId: string, prompt: Prompt): Promise<SegmentResponse> {
    const resp = await fetch(`${this.baseUrl}/api/ballots/${ballotId}/segments`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(prompt),
    })
    return jsonOrThrow<SegmentResponse>(resp)
  }

  async enroll(segmentId: string): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/api/pool`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ segment_id: segmentId }),
    })
    const body = await jsonOrThrow<{ alias: string }>(resp)
    return body.alias
  }

  async listPool(): Promise<PoolEntry[]> {
    return jsonOrThrow<PoolEntry[]>(await fetch(`${this.baseUrl}/api/pool`))
  }

  async query(segmentId: string, k: number, excludeSameBallot: boolean): Promise<RankedMatch[]> {
    const resp = await fetch(`${this.baseUrl}/api/query`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ segment_id: segmentId, k, exclude_same_ballot: excludeSameBallot }),
    })
    const body = await jsonOrThrow<{ matches: RankedMatch[] }>(resp)
    return body.matches
  }

  async heatmap(segmentIds: string[]): Promise<HeatmapResponse> {
    const ids = segmentIds.join(',')
    return jsonOrThrow<HeatmapResponse>(await fetch(`${this.baseUrl}/api/heatmap?queries=${ids}`))
  }

  cropUrl(segmentId: string): string {
    return `${this.baseUrl}/api/segments/${segmentId}/crop`
  }
}
