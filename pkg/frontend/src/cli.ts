#!/usr/bin/env node
import { writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";

import { CsvError, parseCsv } from "./csv.js";
import { SpecError, loadSpec } from "./figspec.js";
import { renderPng } from "./png.js";
import { RenderError, buildFrame, extractSeries, renderSvg } from "./render.js";

function usage(): void {
    console.error("usage: mimocap-figures render --spec <figure-spec.json>");
}

export function main(argv: string[]): number {
    if (argv.length < 1 || argv[0] !== "render") {
        usage();
        return 2;
    }
    const specIdx = argv.indexOf("--spec");
    if (specIdx < 0 || specIdx + 1 >= argv.length) {
        usage();
        return 2;
    }
    try {
        const spec = loadSpec(argv[specIdx + 1]);
        const tables = spec.inputs.map(parseCsv);
        const series = extractSeries(spec, tables);
        const frame = buildFrame(spec, series);
        if (spec.format === "png") {
            writeFileSync(spec.output, renderPng(series, frame));
        } else {
            writeFileSync(spec.output, renderSvg(spec, series, frame) + "\n");
        }
        console.log(`wrote ${spec.output}`);
        return 0;
    } catch (err) {
        if (err instanceof SpecError || err instanceof CsvError || err instanceof RenderError) {
            console.error(`error: ${err.message}`);
            return 2;
        }
        throw err;
    }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
    process.exit(main(process.argv.slice(2)));
}
