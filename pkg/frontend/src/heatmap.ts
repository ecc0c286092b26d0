// Heatmap grid model: pool marks are rows, query marks are columns.
// Cell color is a monotone single-hue ramp in the softmax score.

import type { HeatmapResponse } from './api'

export interface HeatmapCell {
  poolAlias: string
  queryAlias: string
  value: number
  color: string
  tooltip: string
}

export interface HeatmapGrid {
  poolAliases: string[]
  queryAliases: string[]
  rows: HeatmapCell[][]
}

// White -> deep blue; lightness decreases strictly with score.
const HUE = 215
const SAT = 70
const LIGHT_MAX = 97
const LIGHT_MIN = 25

export function lightnessForScore(score: number): number {
  const s = Math.min(1, Math.max(0, score))
  return LIGHT_MAX - (LIGHT_MAX - LIGHT_MIN) * s
}

export function colorForScore(score: number): string {
  return `hsl(${HUE}, ${SAT}%, ${lightnessForScore(score).toFixed(2)}%)`
}

export function buildHeatmapGrid(data: HeatmapResponse): HeatmapGrid {
  const rows = data.pool_aliases.map((poolAlias, i) =>
    data.query_aliases.map((queryAlias, j) => {
      const value = data.cells[i][j]
      return {
        poolAlias,
        queryAlias,
        value,
        color: colorForScore(value),
        tooltip: `${poolAlias} x ${queryAlias}: ${value}`,
      }
    }),
  )
  return { poolAliases: data.pool_aliases, queryAliases: data.query_aliases, rows }
}

// Column j's darkest row index; with a monotone ramp this is the top match.
export function darkestRowInColumn(grid: HeatmapGrid, column: number): number {
  let best = 0
  for (let i = 1; i < grid.rows.length; i++) {
    if (grid.rows[i][column].value > grid.rows[best][column].value) best = i
  }
  return best
}
