// Row-major run-length masks: "w h" then alternating run lengths,
// background first (the service's rle_mask payload).

export interface Mask {
  width: number
  height: number
  data: Uint8Array // 0 background, 1 mask
}

export function decodeRle(text: string): Mask {
  const tokens = text.trim().split(/\s+/)
  if (tokens.length < 2) throw new Error('RLE needs at least width and height')
  const width = Number(tokens[0])
  const height = Number(tokens[1])
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error(`bad RLE dimensions ${tokens[0]}x${tokens[1]}`)
  }
  const data = new Uint8Array(width * height)
  let pos = 0
  let value = 0
  for (const token of tokens.slice(2)) {
    const run = Number(token)
    if (!Number.isInteger(run) || run < 0) throw new Error(`bad run length ${token}`)
    if (value) data.fill(1, pos, pos + run)
    pos += run
    value = 1 - value
  }
  if (pos !== width * height) {
    throw new Error(`RLE runs cover ${pos} pixels, expected ${width * height}`)
  }
  return { width, height, data }
}

export function maskBounds(mask: Mask): { x0: number; y0: number; x1: number; y1: number } | null {
  let x0 = mask.width
  let y0 = mask.height
  let x1 = 0
  let y1 = 0
  let any = false
  for (let y = 0; y < mask.height; y++) {
    for (let x = 0; x < mask.width; x++) {
      if (mask.data[y * mask.width + x]) {
        any = true
        if (x < x0) x0 = x
        if (y < y0) y0 = y
        if (x + 1 > x1) x1 = x + 1
        if (y + 1 > y1) y1 = y + 1
      }
    }
  }
  return any ? { x0, y0, x1, y1 } : null
}
