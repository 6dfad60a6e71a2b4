import { CsvTable, columnIndex, numericCell, parseCsv } from "./csv.js";
import { FigureSpec, SeriesSpec, axesFor } from "./figspec.js";

export class RenderError extends Error {}

export interface SeriesData {
    label: string;
    color: string;
    dash?: string;
    /** sorted by x; raw strings preserved verbatim from the CSV */
    points: { x: number; y: number; rawX: string; rawY: string }[];
}

const PALETTE = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2",
];

function matches(table: CsvTable, row: number, match: Record<string, string>): boolean {
    for (const [col, want] of Object.entries(match)) {
        const idx = columnIndex(table, col);
        const cell = table.rows[row][idx].trim();
        if (cell === String(want)) continue;
        // numeric tolerance: "2" selects cells printed as "2.0"
        const a = Number(cell);
        const b = Number(want);
        if (Number.isFinite(a) && Number.isFinite(b) && a === b) continue;
        return false;
    }
    return true;
}

export function extractSeries(spec: FigureSpec, tables: CsvTable[]): SeriesData[] {
    const { x: xCol, y: yCol } = axesFor(spec.kind);
    const out: SeriesData[] = [];
    spec.series.forEach((series: SeriesSpec, si: number) => {
        const points: SeriesData["points"] = [];
        for (const table of tables) {
            const xi = columnIndex(table, xCol);
            const yi = columnIndex(table, yCol);
            for (let r = 0; r < table.rows.length; r++) {
                if (!matches(table, r, series.match)) continue;
                points.push({
                    x: numericCell(table, r, xi),
                    y: numericCell(table, r, yi),
                    rawX: table.rows[r][xi].trim(),
                    rawY: table.rows[r][yi].trim(),
                });
            }
        }
        if (points.length === 0) {
            throw new RenderError(`series ${si} (${JSON.stringify(series.match)}) selected no rows`);
        }
        points.sort((a, b) => a.x - b.x);
        out.push({
            label: series.label ?? Object.values(series.match).join("/"),
            color: series.color ?? PALETTE[si % PALETTE.length],
            dash: series.dash,
            points,
        });
    });
    return out;
}

export interface Frame {
    width: number;
    height: number;
    margin: { left: number; right: number; top: number; bottom: number };
    xMin: number;
    xMax: number;
    yMin: number;
    yMax: number;
    logY: boolean;
}

export function buildFrame(spec: FigureSpec, series: SeriesData[]): Frame {
    const { logY } = axesFor(spec.kind);
    const xs = series.flatMap((s) => s.points.map((p) => p.x));
    let ys = series.flatMap((s) => s.points.map((p) => p.y));
    if (logY) {
        ys = ys.filter((v) => v > 0);
        if (ys.length === 0) {
            throw new RenderError("log-scale plot has no positive values");
        }
    }
    const xMin = spec.x?.min ?? Math.min(...xs);
    const xMax = spec.x?.max ?? Math.max(...xs);
    let yMin = spec.y?.min ?? Math.min(...ys);
    let yMax = spec.y?.max ?? Math.max(...ys);
    if (logY) {
        // expand to full decades so tick labels are powers of ten
        yMin = Math.pow(10, Math.floor(Math.log10(yMin)));
        yMax = Math.pow(10, Math.ceil(Math.log10(yMax)));
    }
    if (!(xMax > xMin)) {
        throw new RenderError("degenerate x range");
    }
    if (!(yMax > yMin)) {
        yMax = yMin + 1;
    }
    return {
        width: spec.width ?? 720,
        height: spec.height ?? 480,
        margin: { left: 64, right: 16, top: spec.title ? 32 : 16, bottom: 48 },
        xMin, xMax, yMin, yMax,
        logY,
    };
}

export function toPixel(frame: Frame, x: number, y: number): { px: number; py: number } {
    const innerW = frame.width - frame.margin.left - frame.margin.right;
    const innerH = frame.height - frame.margin.top - frame.margin.bottom;
    const fx = (x - frame.xMin) / (frame.xMax - frame.xMin);
    const fy = frame.logY
        ? (Math.log10(y) - Math.log10(frame.yMin)) / (Math.log10(frame.yMax) - Math.log10(frame.yMin))
        : (y - frame.yMin) / (frame.yMax - frame.yMin);
    return {
        px: frame.margin.left + fx * innerW,
        py: frame.height - frame.margin.bottom - fy * innerH,
    };
}

function fmt(v: number): string {
    return v.toFixed(2);
}

function niceTicks(min: number, max: number, count = 6): number[] {
    const span = max - min;
    const step = Math.pow(10, Math.floor(Math.log10(span / count)));
    const candidates = [step, 2 * step, 2.5 * step, 5 * step, 10 * step];
    const chosen = candidates.find((s) => span / s <= count) ?? 10 * step;
    const ticks: number[] = [];
    for (let t = Math.ceil(min / chosen) * chosen; t <= max + 1e-9; t += chosen) {
        ticks.push(Number(t.toFixed(10)));
    }
    return ticks;
}

function logTicks(min: number, max: number): number[] {
    const ticks: number[] = [];
    for (let e = Math.ceil(Math.log10(min) - 1e-9); e <= Math.log10(max) + 1e-9; e++) {
        ticks.push(Math.pow(10, e));
    }
    return ticks;
}

const AXIS_LABELS: Record<string, { x: string; y: string }> = {
    capacity: { x: "SNR (dB)", y: "rate (bpcu)" },
    outage: { x: "SNR (dB)", y: "outage probability" },
    "eps-capacity": { x: "SNR (dB)", y: "eps-capacity (bpcu)" },
    csi: { x: "training length", y: "required SNR (dB)" },
};

function esc(text: string): string {
    return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

export function renderSvg(spec: FigureSpec, series: SeriesData[], frame: Frame): string {
    const parts: string[] = [];
    parts.push(
        `<svg xmlns="http://www.w3.org/2000/svg" width="${frame.width}" height="${frame.height}" ` +
        `viewBox="0 0 ${frame.width} ${frame.height}" font-family="sans-serif" font-size="12">`,
    );
    parts.push(`<rect width="${frame.width}" height="${frame.height}" fill="white"/>`);
    if (spec.title) {
        parts.push(`<text x="${frame.width / 2}" y="20" text-anchor="middle" font-size="14">${esc(spec.title)}</text>`);
    }
    const x0 = frame.margin.left;
    const x1 = frame.width - frame.margin.right;
    const y0 = frame.height - frame.margin.bottom;
    const y1 = frame.margin.top;

    const xticks = niceTicks(frame.xMin, frame.xMax);
    const yticks = frame.logY ? logTicks(frame.yMin, frame.yMax) : niceTicks(frame.yMin, frame.yMax);
    for (const t of xticks) {
        const { px } = toPixel(frame, t, frame.yMin === 0 && frame.logY ? 1 : frame.yMin);
        parts.push(`<line x1="${fmt(px)}" y1="${y0}" x2="${fmt(px)}" y2="${y1}" stroke="#dddddd"/>`);
        parts.push(`<text x="${fmt(px)}" y="${y0 + 18}" text-anchor="middle">${t}</text>`);
    }
    for (const t of yticks) {
        const { py } = toPixel(frame, frame.xMin, t);
        parts.push(`<line x1="${x0}" y1="${fmt(py)}" x2="${x1}" y2="${fmt(py)}" stroke="#dddddd"/>`);
        const label = frame.logY ? `1e${Math.round(Math.log10(t))}` : String(t);
        parts.push(`<text x="${x0 - 6}" y="${fmt(py + 4)}" text-anchor="end">${label}</text>`);
    }
    parts.push(`<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" fill="none" stroke="#333333"/>`);
    const labels = AXIS_LABELS[spec.kind];
    parts.push(`<text x="${(x0 + x1) / 2}" y="${frame.height - 8}" text-anchor="middle">${esc(labels.x)}</text>`);
    parts.push(
        `<text x="16" y="${(y0 + y1) / 2}" text-anchor="middle" transform="rotate(-90 16 ${(y0 + y1) / 2})">${esc(labels.y)}</text>`,
    );

    series.forEach((s, si) => {
        const drawable = s.points.filter((p) => !frame.logY || p.y > 0);
        const coords = drawable.map((p) => {
            const { px, py } = toPixel(frame, p.x, p.y);
            return `${fmt(px)},${fmt(py)}`;
        });
        const dash = s.dash ? ` stroke-dasharray="${s.dash}"` : "";
        parts.push(
            `<polyline fill="none" stroke="${s.color}" stroke-width="1.5"${dash} points="${coords.join(" ")}"/>`,
        );
        for (const p of drawable) {
            const { px, py } = toPixel(frame, p.x, p.y);
            parts.push(
                `<circle cx="${fmt(px)}" cy="${fmt(py)}" r="2.5" fill="${s.color}" ` +
                `data-series="${esc(s.label)}" data-x="${esc(p.rawX)}" data-y="${esc(p.rawY)}"/>`,
            );
        }
        const ly = frame.margin.top + 16 + 16 * si;
        parts.push(`<line x1="${x1 - 150}" y1="${ly - 4}" x2="${x1 - 122}" y2="${ly - 4}" stroke="${s.color}" stroke-width="1.5"${dash}/>`);
        parts.push(`<text x="${x1 - 116}" y="${ly}">${esc(s.label)}</text>`);
    });
    parts.push("</svg>");
    return parts.join("\n");
}

export function renderFigure(spec: FigureSpec): { svg: string; series: SeriesData[]; frame: Frame } {
    const tables = spec.inputs.map(parseCsv);
    const series = extractSeries(spec, tables);
    const frame = buildFrame(spec, series);
    return { svg: renderSvg(spec, series, frame), series, frame };
}
