// Ranking table model. Rows keep exactly the server's rank order; the
// client never re-sorts by score.

import type { RankedMatch } from './api'

export interface RankingRow {
  rank: number
  alias: string
  score: string // softmax, 4 decimals
  logit: string // raw logit, 4 decimals
  scoreTooltip: string // full precision
  logitTooltip: string
  isSelf: boolean
}

export function formatScore(value: number): string {
  return value.toFixed(4)
}

export function buildRankingRows(matches: RankedMatch[], selfAlias: string | null): RankingRow[] {
  return matches.map((m) => ({
    rank: m.rank,
    alias: m.alias,
    score: formatScore(m.softmax_score),
    logit: formatScore(m.raw_logit),
    scoreTooltip: String(m.softmax_score),
    logitTooltip: String(m.raw_logit),
    isSelf: selfAlias !== null && m.alias === selfAlias,
  }))
}
