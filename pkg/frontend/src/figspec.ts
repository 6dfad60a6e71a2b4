import { readFileSync } from "node:fs";

export type PlotKind = "capacity" | "outage" | "eps-capacity" | "csi";

export interface SeriesSpec {
    /** column -> required cell value (string compare on trimmed cells) */
    match: Record<string, string>;
    label?: string;
    color?: string;
    /** SVG dash pattern, e.g. "4 2" */
    dash?: string;
}

export interface AxisRange {
    min?: number;
    max?: number;
}

export interface FigureSpec {
    kind: PlotKind;
    inputs: string[];
    series: SeriesSpec[];
    output: string;
    format?: "svg" | "png";
    title?: string;
    width?: number;
    height?: number;
    x?: AxisRange;
    y?: AxisRange;
}

export class SpecError extends Error {}

const KINDS: PlotKind[] = ["capacity", "outage", "eps-capacity", "csi"];

export function loadSpec(path: string): FigureSpec {
    let raw: unknown;
    try {
        raw = JSON.parse(readFileSync(path, "utf8"));
    } catch (err) {
        throw new SpecError(`cannot read figure spec ${path}: ${(err as Error).message}`);
    }
    return validateSpec(raw);
}

export function validateSpec(raw: unknown): FigureSpec {
    if (typeof raw !== "object" || raw === null) {
        throw new SpecError("figure spec must be a JSON object");
    }
    const spec = raw as Partial<FigureSpec>;
    if (!spec.kind || !KINDS.includes(spec.kind)) {
        throw new SpecError(`spec.kind must be one of ${KINDS.join(", ")}`);
    }
    if (!Array.isArray(spec.inputs) || spec.inputs.length === 0) {
        throw new SpecError("spec.inputs must list at least one CSV file");
    }
    if (!Array.isArray(spec.series) || spec.series.length === 0) {
        throw new SpecError("spec.series must list at least one series");
    }
    for (const s of spec.series) {
        if (typeof s !== "object" || s === null || typeof (s as SeriesSpec).match !== "object") {
            throw new SpecError("every series needs a 'match' object of column -> value");
        }
    }
    if (typeof spec.output !== "string" || spec.output.length === 0) {
        throw new SpecError("spec.output must be a file path");
    }
    const format = spec.format ?? (spec.output.toLowerCase().endsWith(".png") ? "png" : "svg");
    if (format !== "svg" && format !== "png") {
        throw new SpecError("spec.format must be 'svg' or 'png'");
    }
    return {
        kind: spec.kind,
        inputs: spec.inputs,
        series: spec.series as SeriesSpec[],
        output: spec.output,
        format,
        title: spec.title,
        width: spec.width ?? 720,
        height: spec.height ?? 480,
        x: spec.x,
        y: spec.y,
    };
}

/** Axis columns and scales per plot kind. */
export function axesFor(kind: PlotKind): { x: string; y: string; logY: boolean } {
    switch (kind) {
        case "capacity":
            return { x: "snr_db", y: "rate_bpcu", logY: false };
        case "outage":
            return { x: "snr_db", y: "pout", logY: true };
        case "eps-capacity":
            return { x: "snr_db", y: "c_eps", logY: false };
        case "csi":
            return { x: "csi_np", y: "min_snr_db", logY: false };
    }
}
