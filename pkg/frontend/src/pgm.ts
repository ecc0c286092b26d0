// Minimal PGM (P2/P5, 8-bit) decode so ballot photos saved as PGM render
// on the canvas; PNG uploads go through the browser's native decoder.

export interface GrayImage {
  width: number
  height: number
  gray: Uint8Array
}

export function decodePgm(bytes: Uint8Array): GrayImage {
  const magic = String.fromCharCode(bytes[0], bytes[1])
  if (magic !== 'P2' && magic !== 'P5') throw new Error(`not a PGM file (magic ${magic})`)

  const tokens: string[] = []
  let pos = 2
  while (tokens.length < 3 && pos < bytes.length) {
    const ch = bytes[pos]
    if (ch === 0x23) {
      // '#' comment to end of line
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++
      pos++
      continue
    }
    if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      pos++
      continue
    }
    let token = ''
    while (pos < bytes.length && !/\s/.test(String.fromCharCode(bytes[pos]))) {
      token += String.fromCharCode(bytes[pos])
      pos++
    }
    tokens.push(token)
  }
  const width = Number(tokens[0])
  const height = Number(tokens[1])
  const maxval = Number(tokens[2])
  if (!width || !height || !maxval || maxval > 255) {
    throw new Error(`bad PGM header ${tokens.join(' ')}`)
  }

  const gray = new Uint8Array(width * height)
  if (magic === 'P5') {
    pos++ // single whitespace after maxval
    if (bytes.length - pos < width * height) throw new Error('truncated PGM data')
    for (let i = 0; i < width * height; i++) {
      gray[i] = Math.round((bytes[pos + i] / maxval) * 255)
    }
  } else {
    const text = new TextDecoder().decode(bytes.subarray(pos))
    const values = text.trim().split(/\s+/).map(Number)
    if (values.length < width * height) throw new Error('truncated PGM data')
    for (let i = 0; i < width * height; i++) {
      gray[i] = Math.round((values[i] / maxval) * 255)
    }
  }
  return { width, height, gray }
}

export function toImageData(image: GrayImage): ImageData {
  const rgba = new Uint8ClampedArray(image.width * image.height * 4)
  for (let i = 0; i < image.gray.length; i++) {
    rgba[i * 4] = rgba[i * 4 + 1] = rgba[i * 4 + 2] = image.gray[i]
    rgba[i * 4 + 3] = 255
  }
  return new ImageData(rgba, image.width, image.height)
}
