import { describe, expect, it } from 'vitest'

import type { RankedMatch } from '../src/api'
import { buildRankingRows, formatScore } from '../src/table'

const MATCHES: RankedMatch[] = [
  { rank: 1, alias: 'alias3_0', softmax_score: 0.61234567, raw_logit: 14.2857 },
  { rank: 2, alias: 'alias0_2', softmax_score: 0.30111111, raw_logit: 13.5712345 },
  { rank: 3, alias: 'alias9_1', softmax_score: 0.08654322, raw_logit: 12.31 },
]

describe('buildRankingRows', () => {
  it('keeps exactly the server order, never re-sorting by score', () => {
    const shuffledScores = [
      { ...MATCHES[0], softmax_score: 0.1 },
      { ...MATCHES[1], softmax_score: 0.9 }, // higher score at worse rank
      { ...MATCHES[2], softmax_score: 0.5 },
    ]
    const rows = buildRankingRows(shuffledScores, null)
    expect(rows.map((r) => r.rank)).toEqual([1, 2, 3])
    expect(rows.map((r) => r.alias)).toEqual(['alias3_0', 'alias0_2', 'alias9_1'])
  })

  it('formats scores to 4 decimals with full precision in tooltips', () => {
    const rows = buildRankingRows(MATCHES, null)
    expect(rows[0].score).toBe('0.6123')
    expect(rows[1].logit).toBe('13.5712')
    expect(rows[0].scoreTooltip).toBe('0.61234567')
  })

  it('labels the self match', () => {
    const rows = buildRankingRows(MATCHES, 'alias0_2')
    expect(rows.map((r) => r.isSelf)).toEqual([false, true, false])
  })
})

describe('formatScore', () => {
  it('always shows 4 decimals', () => {
    expect(formatScore(1)).toBe('1.0000')
    expect(formatScore(0.00004)).toBe('0.0000')
  })
})
