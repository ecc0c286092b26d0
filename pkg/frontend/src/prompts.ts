// Canvas gesture handling: a short press is a point prompt, a drag of at
// least DRAG_THRESHOLD_PX becomes a box prompt.

import type { Prompt } from './api'

export const DRAG_THRESHOLD_PX = 4

export interface GesturePoint {
  x: number
  y: number
}

export function classifyGesture(down: GesturePoint, up: GesturePoint): Prompt {
  const dx = up.x - down.x
  const dy = up.y - down.y
  if (Math.hypot(dx, dy) < DRAG_THRESHOLD_PX) {
    return { kind: 'point', x: Math.round(down.x), y: Math.round(down.y) }
  }
  return {
    kind: 'box',
    x0: Math.round(Math.min(down.x, up.x)),
    y0: Math.round(Math.min(down.y, up.y)),
    x1: Math.round(Math.max(down.x, up.x)),
    y1: Math.round(Math.max(down.y, up.y)),
  }
}

// Canvas CSS pixels -> image pixels for a canvas scaled to fit its image.
export function canvasToImage(
  canvasPoint: GesturePoint,
  canvasSize: { width: number; height: number },
  imageSize: { width: number; height: number },
): GesturePoint {
  return {
    x: (canvasPoint.x / canvasSize.width) * imageSize.width,
    y: (canvasPoint.y / canvasSize.height) * imageSize.height,
  }
}

export function promptAnchor(prompt: Prompt): GesturePoint {
  if (prompt.kind === 'point') return { x: prompt.x, y: prompt.y }
  return { x: (prompt.x0 + prompt.x1) / 2, y: (prompt.y0 + prompt.y1) / 2 }
}
