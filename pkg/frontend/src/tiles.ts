/** Pyramid arithmetic for the tile viewer.
 *
 * Level z is the full-resolution raster sampled with stride 2^z, so the
 * level extent is ceil(full / 2^z) and a tile (z, x, y) covers the
 * level-pixel square [x*T, (x+1)*T) x [y*T, (y+1)*T).
 */

export interface Viewport {
  /** center in level-0 pixels */
  centerX: number;
  centerY: number;
  level: number;
}

export interface TileCoord {
  z: number;
  x: number;
  y: number;
}

export function levelExtent(fullPx: number, z: number): number {
  return Math.ceil(fullPx / (1 << z));
}

export function tilesPerAxis(fullPx: number, z: number, tileSize: number): number {
  return Math.ceil(levelExtent(fullPx, z) / tileSize);
}

export function clampViewport(
  vp: Viewport,
  widthPx: number,
  heightPx: number,
  maxLevel: number,
): Viewport {
  const level = Math.min(Math.max(vp.level, 0), maxLevel);
  return {
    level,
    centerX: Math.min(Math.max(vp.centerX, 0), widthPx - 1),
    centerY: Math.min(Math.max(vp.centerY, 0), heightPx - 1),
  };
}

/**
 * Tiles intersecting a viewW x viewH screen window centered on the
 * viewport, at the viewport's level. Only tiles inside the level bounds
 * are returned.
 */
export function visibleTiles(
  vp: Viewport,
  viewW: number,
  viewH: number,
  tileSize: number,
  widthPx: number,
  heightPx: number,
): TileCoord[] {
  const stride = 1 << vp.level;
  const cx = vp.centerX / stride; // center in level pixels
  const cy = vp.centerY / stride;
  const x0 = Math.max(0, Math.floor((cx - viewW / 2) / tileSize));
  const y0 = Math.max(0, Math.floor((cy - viewH / 2) / tileSize));
  const x1 = Math.min(
    tilesPerAxis(widthPx, vp.level, tileSize) - 1,
    Math.floor((cx + viewW / 2) / tileSize),
  );
  const y1 = Math.min(
    tilesPerAxis(heightPx, vp.level, tileSize) - 1,
    Math.floor((cy + viewH / 2) / tileSize),
  );
  const out: TileCoord[] = [];
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      out.push({ z: vp.level, x, y });
    }
  }
  return out;
}
