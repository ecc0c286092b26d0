// Single-page auditor console: upload a ballot photo, place point/box
// prompts on the canvas, enroll and query marks, review the ranking table
// and heatmap. All scoring comes from the service API.

import { ApiError, MarkMatchApi, type Prompt } from './api'
import { buildHeatmapGrid, colorForScore, darkestRowInColumn } from './heatmap'
import { decodePgm, toImageData } from './pgm'
import { canvasToImage, classifyGesture, promptAnchor, type GesturePoint } from './prompts'
import { decodeRle } from './rle'
import { buildRankingRows } from './table'
import * as store from './state'

const api = new MarkMatchApi('')
let state = store.initialState()
let ballotImage: ImageData | null = null

const el = {
  file: document.getElementById('ballot-file') as HTMLInputElement,
  canvas: document.getElementById('ballot-canvas') as HTMLCanvasElement,
  segments: document.getElementById('segments') as HTMLElement,
  ranking: document.getElementById('ranking') as HTMLElement,
  heatmap: document.getElementById('heatmap') as HTMLElement,
  heatmapButton: document.getElementById('show-heatmap') as HTMLButtonElement,
  exclude: document.getElementById('exclude-same-ballot') as HTMLInputElement,
  banner: document.getElementById('banner') as HTMLElement,
  hint: document.getElementById('hint') as HTMLElement,
}

function setState(next: store.ConsoleState): void {
  state = next
  render()
}

// ---------------------------------------------------------------------------
// Upload
// ---------------------------------------------------------------------------

el.file.addEventListener('change', async () => {
  const file = el.file.files?.[0]
  if (!file) return
  const bytes = new Uint8Array(await file.arrayBuffer())
  const isPgm = file.name.endsWith('.pgm')
  try {
    ballotImage = isPgm ? toImageData(decodePgm(bytes)) : await decodeWithBrowser(file)
    const contentType = isPgm ? 'image/x-portable-graymap' : 'image/png'
    const ballotId = await api.uploadBallot(bytes, contentType)
    setState(store.ballotUploaded(state, ballotId))
  } catch (err) {
    setState(store.requestFailed(state, describe(err)))
  }
})

async function decodeWithBrowser(file: File): Promise<ImageData> {
  const bitmap = await createImageBitmap(file)
  const scratch = document.createElement('canvas')
  scratch.width = bitmap.width
  scratch.height = bitmap.height
  const ctx = scratch.getContext('2d')!
  ctx.drawImage(bitmap, 0, 0)
  return ctx.getImageData(0, 0, bitmap.width, bitmap.height)
}

// ---------------------------------------------------------------------------
// Canvas gestures -> prompts
// ---------------------------------------------------------------------------

let downAt: GesturePoint | null = null

el.canvas.addEventListener('mousedown', (ev) => {
  downAt = { x: ev.offsetX, y: ev.offsetY }
})

el.canvas.addEventListener('mouseup', async (ev) => {
  if (!downAt || !state.ballotId || !ballotImage) return
  const upAt = { x: ev.offsetX, y: ev.offsetY }
  const canvasSize = { width: el.canvas.clientWidth, height: el.canvas.clientHeight }
  const imageSize = { width: ballotImage.width, height: ballotImage.height }
  const prompt = classifyGesture(
    canvasToImage(downAt, canvasSize, imageSize),
    canvasToImage(upAt, canvasSize, imageSize),
  )
  downAt = null
  const hadPending = state.pendingPrompt !== null
  setState(store.promptRequested(state, prompt))
  if (!hadPending) await runPrompt(prompt)
})

async function runPrompt(prompt: Prompt): Promise<void> {
  const ballotId = state.ballotId
  if (!ballotId) return
  try {
    const response = await api.segmentBallot(ballotId, prompt)
    setState(store.promptSucceeded(state, response))
  } catch (err) {
    if (err instanceof ApiError && err.status === 422) {
      setState(store.promptFoundNothing(state, promptAnchor(prompt)))
    } else {
      setState(store.requestFailed(state, describe(err)))
    }
  }
  const next = state.pendingPrompt
  if (next) await runPrompt(next)
}

// ---------------------------------------------------------------------------
// Segment actions
// ---------------------------------------------------------------------------

async function enroll(segmentId: string): Promise<void> {
  try {
    const alias = await api.enroll(segmentId)
    setState(store.segmentEnrolled(state, segmentId, alias))
  } catch (err) {
    setState(store.requestFailed(state, describe(err)))
  }
}

async function runQuery(segmentId: string): Promise<void> {
  setState(store.querySelected(state, segmentId))
  try {
    const matches = await api.query(segmentId, 5, state.excludeSameBallot)
    setState(store.rankingReceived(state, segmentId, matches))
  } catch (err) {
    setState(store.requestFailed(state, describe(err)))
  }
}

el.exclude.addEventListener('change', () => {
  setState(store.exclusionToggled(state, el.exclude.checked))
  if (state.selectedSegmentId) void runQuery(state.selectedSegmentId)
})

el.heatmapButton.addEventListener('click', async () => {
  const ids = state.segments.map((s) => s.segmentId)
  if (!ids.length) return
  try {
    renderHeatmap(await api.heatmap(ids))
  } catch (err) {
    setState(store.requestFailed(state, describe(err)))
  }
})

el.banner.addEventListener('click', () => setState(store.bannerDismissed(state)))

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

function describe(err: unknown): string {
  if (err instanceof ApiError) return `service error ${err.status}: ${err.message}`
  return `network error: ${String(err)}`
}

function render(): void {
  renderCanvas()
  renderSegments()
  renderRanking()
  el.banner.textContent = state.banner ?? ''
  el.banner.style.display = state.banner ? 'block' : 'none'
  renderHint()
}

function renderCanvas(): void {
  const ctx = el.canvas.getContext('2d')
  if (!ctx || !ballotImage) return
  el.canvas.width = ballotImage.width
  el.canvas.height = ballotImage.height
  ctx.putImageData(ballotImage, 0, 0)
  ctx.fillStyle = 'rgba(40, 110, 220, 0.35)'
  for (const segment of state.segments) {
    const mask = decodeRle(segment.rleMask)
    const [x0, y0, x1, y1] = segment.bbox
    for (let y = y0; y < y1; y++) {
      for (let x = x0; x < x1; x++) {
        if (mask.data[y * mask.width + x]) ctx.fillRect(x, y, 1, 1)
      }
    }
  }
}

function renderHint(): void {
  if (!state.hint || !ballotImage) {
    el.hint.style.display = 'none'
    return
  }
  const scaleX = el.canvas.clientWidth / ballotImage.width
  const scaleY = el.canvas.clientHeight / ballotImage.height
  el.hint.textContent = state.hint.text
  el.hint.style.display = 'block'
  el.hint.style.left = `${state.hint.at.x * scaleX + el.canvas.offsetLeft}px`
  el.hint.style.top = `${state.hint.at.y * scaleY + el.canvas.offsetTop}px`
}

function renderSegments(): void {
  el.segments.replaceChildren()
  for (const segment of state.segments) {
    const card = document.createElement('div')
    card.className = 'segment-card'

    const thumb = document.createElement('img')
    thumb.src = api.cropUrl(segment.segmentId)
    thumb.width = 64
    thumb.height = 64
    card.appendChild(thumb)

    if (segment.alias) {
      const badge = document.createElement('span')
      badge.className = 'alias-badge'
      badge.textContent = segment.alias
      card.appendChild(badge)
    } else {
      const enrollButton = document.createElement('button')
      enrollButton.textContent = 'Enroll'
      enrollButton.addEventListener('click', () => void enroll(segment.segmentId))
      card.appendChild(enrollButton)
    }

    const queryButton = document.createElement('button')
    queryButton.textContent = 'Query'
    queryButton.addEventListener('click', () => void runQuery(segment.segmentId))
    card.appendChild(queryButton)

    el.segments.appendChild(card)
  }
}

function renderRanking(): void {
  el.ranking.replaceChildren()
  if (!state.ranking || state.rankingFor !== state.selectedSegmentId) return
  const selected = state.segments.find((s) => s.segmentId === state.rankingFor)
  const rows = buildRankingRows(state.ranking, selected?.alias ?? null)

  const table = document.createElement('table')
  const head = table.insertRow()
  for (const title of ['rank', 'alias', 'mark', 'softmax', 'logit']) {
    const th = document.createElement('th')
    th.textContent = title
    head.appendChild(th)
  }
  for (const row of rows) {
    const tr = table.insertRow()
    tr.insertCell().textContent = String(row.rank)
    tr.insertCell().textContent = row.isSelf ? `${row.alias} (self)` : row.alias
    const img = document.createElement('img')
    const record = state.segments.find((s) => s.alias === row.alias)
    if (record) img.src = api.cropUrl(record.segmentId)
    img.width = 32
    img.height = 32
    tr.insertCell().appendChild(img)
    const score = tr.insertCell()
    score.textContent = row.score
    score.title = row.scoreTooltip
    const logit = tr.insertCell()
    logit.textContent = row.logit
    logit.title = row.logitTooltip
  }
  el.ranking.appendChild(table)
}

function renderHeatmap(data: Parameters<typeof buildHeatmapGrid>[0]): void {
  const grid = buildHeatmapGrid(data)
  el.heatmap.replaceChildren()
  const table = document.createElement('table')
  const head = table.insertRow()
  head.insertCell().textContent = 'pool \\ query'
  for (const alias of grid.queryAliases) {
    const th = document.createElement('th')
    th.textContent = alias
    head.appendChild(th)
  }
  grid.rows.forEach((cells, i) => {
    const tr = table.insertRow()
    tr.insertCell().textContent = grid.poolAliases[i]
    cells.forEach((cell, j) => {
      const td = tr.insertCell()
      td.style.backgroundColor = cell.color
      td.title = cell.tooltip
      td.className = darkestRowInColumn(grid, j) === i ? 'top-match' : ''
    })
  })
  el.heatmap.appendChild(table)
}

// expose the ramp for styling documentation in the page footer
document.documentElement.style.setProperty('--ramp-max', colorForScore(1))
render()
