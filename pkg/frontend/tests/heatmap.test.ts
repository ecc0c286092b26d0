import { describe, expect, it } from 'vitest'

import { buildHeatmapGrid, colorForScore, darkestRowInColumn, lightnessForScore } from '../src/heatmap'

describe('color ramp', () => {
  it('lightness decreases strictly with score (darker iff higher)', () => {
    let previous = Infinity
    for (let i = 0; i <= 1000; i++) {
      const light = lightnessForScore(i / 1000)
      expect(light).toBeLessThan(previous)
      previous = light
    }
  })

  it('is a single monotone hue', () => {
    const hues = new Set(
      [0, 0.25, 0.5, 0.75, 1].map((s) => colorForScore(s).match(/hsl\((\d+)/)?.[1]),
    )
    expect(hues.size).toBe(1)
  })

  it('clamps out-of-range scores', () => {
    expect(lightnessForScore(-1)).toBe(lightnessForScore(0))
    expect(lightnessForScore(2)).toBe(lightnessForScore(1))
  })
})

describe('buildHeatmapGrid', () => {
  const data = {
    pool_aliases: ['alias0_0', 'alias1_0', 'alias2_0'],
    query_aliases: ['alias9_0', 'alias9_1'],
    cells: [
      [0.7, 0.1],
      [0.2, 0.3],
      [0.1, 0.6],
    ],
  }

  it('keeps pool rows x query columns orientation', () => {
    const grid = buildHeatmapGrid(data)
    expect(grid.rows.length).toBe(3)
    expect(grid.rows[0].length).toBe(2)
    expect(grid.rows[2][1].poolAlias).toBe('alias2_0')
    expect(grid.rows[2][1].queryAlias).toBe('alias9_1')
    expect(grid.rows[2][1].value).toBe(0.6)
  })

  it('tooltips carry the exact value', () => {
    const grid = buildHeatmapGrid(data)
    expect(grid.rows[0][0].tooltip).toContain('0.7')
  })

  it('the darkest cell of a column is its top-1 row', () => {
    const grid = buildHeatmapGrid(data)
    expect(darkestRowInColumn(grid, 0)).toBe(0)
    expect(darkestRowInColumn(grid, 1)).toBe(2)
  })
})
