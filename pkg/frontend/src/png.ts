import { deflateSync } from "node:zlib";

import { Frame, SeriesData, toPixel } from "./render.js";

/** Minimal RGBA raster with a PNG encoder (line plots only, no text). */
export class Raster {
    data: Uint8Array;

    constructor(public width: number, public height: number) {
        this.data = new Uint8Array(width * height * 4).fill(255);
    }

    set(x: number, y: number, rgb: [number, number, number]): void {
        if (x < 0 || y < 0 || x >= this.width || y >= this.height) return;
        const o = (y * this.width + x) * 4;
        this.data[o] = rgb[0];
        this.data[o + 1] = rgb[1];
        this.data[o + 2] = rgb[2];
        this.data[o + 3] = 255;
    }

    line(x0: number, y0: number, x1: number, y1: number, rgb: [number, number, number]): void {
        let ax = Math.round(x0);
        let ay = Math.round(y0);
        const bx = Math.round(x1);
        const by = Math.round(y1);
        const dx = Math.abs(bx - ax);
        const dy = -Math.abs(by - ay);
        const sx = ax < bx ? 1 : -1;
        const sy = ay < by ? 1 : -1;
        let err = dx + dy;
        for (;;) {
            this.set(ax, ay, rgb);
            if (ax === bx && ay === by) break;
            const e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                ax += sx;
            }
            if (e2 <= dx) {
                err += dx;
                ay += sy;
            }
        }
    }

    dot(x: number, y: number, rgb: [number, number, number]): void {
        const cx = Math.round(x);
        const cy = Math.round(y);
        for (let dx = -1; dx <= 1; dx++) {
            for (let dy = -1; dy <= 1; dy++) {
                this.set(cx + dx, cy + dy, rgb);
            }
        }
    }

    png(): Buffer {
        const stride = this.width * 4;
        const raw = Buffer.alloc((stride + 1) * this.height);
        for (let y = 0; y < this.height; y++) {
            raw[y * (stride + 1)] = 0; // filter type none
            raw.set(this.data.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
        }
        const ihdr = Buffer.alloc(13);
        ihdr.writeUInt32BE(this.width, 0);
        ihdr.writeUInt32BE(this.height, 4);
        ihdr[8] = 8; // bit depth
        ihdr[9] = 6; // RGBA
        return Buffer.concat([
            Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
            chunk("IHDR", ihdr),
            chunk("IDAT", deflateSync(raw)),
            chunk("IEND", Buffer.alloc(0)),
        ]);
    }
}

function chunk(kind: string, body: Buffer): Buffer {
    const out = Buffer.alloc(body.length + 12);
    out.writeUInt32BE(body.length, 0);
    out.write(kind, 4, "ascii");
    body.copy(out, 8);
    out.writeUInt32BE(crc32(out.subarray(4, 8 + body.length)), 8 + body.length);
    return out;
}

const CRC_TABLE = (() => {
    const table = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
        let c = n;
        for (let k = 0; k < 8; k++) {
            c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
        }
        table[n] = c >>> 0;
    }
    return table;
})();

function crc32(buf: Buffer): number {
    let c = 0xffffffff;
    for (const byte of buf) {
        c = CRC_TABLE[(c ^ byte) & 0xff] ^ (c >>> 8);
    }
    return (c ^ 0xffffffff) >>> 0;
}

function parseColor(color: string): [number, number, number] {
    const m = /^#([0-9a-f]{6})$/i.exec(color.trim());
    if (!m) return [0, 0, 0];
    const v = parseInt(m[1], 16);
    return [(v >> 16) & 255, (v >> 8) & 255, v & 255];
}

export function renderPng(series: SeriesData[], frame: Frame): Buffer {
    const raster = new Raster(frame.width, frame.height);
    const grey: [number, number, number] = [51, 51, 51];
    const x0 = frame.margin.left;
    const x1 = frame.width - frame.margin.right;
    const y0 = frame.height - frame.margin.bottom;
    const y1 = frame.margin.top;
    raster.line(x0, y0, x1, y0, grey);
    raster.line(x0, y0, x0, y1, grey);
    raster.line(x1, y0, x1, y1, grey);
    raster.line(x0, y1, x1, y1, grey);
    for (const s of series) {
        const rgb = parseColor(s.color);
        const pts = s.points
            .filter((p) => !frame.logY || p.y > 0)
            .map((p) => toPixel(frame, p.x, p.y));
        for (let i = 1; i < pts.length; i++) {
            raster.line(pts[i - 1].px, pts[i - 1].py, pts[i].px, pts[i].py, rgb);
        }
        for (const p of pts) {
            raster.dot(p.px, p.py, rgb);
        }
    }
    return raster.png();
}
