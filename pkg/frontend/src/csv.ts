import { readFileSync } from "node:fs";

export class CsvError extends Error {
    constructor(public file: string, public line: number, message: string) {
        super(`${file}:${line}: ${message}`);
    }
}

export interface CsvTable {
    file: string;
    columns: string[];
    /** raw string cells, exactly as they appear in the file */
    rows: string[][];
}

/** Split one CSV line honoring double-quoted cells ("" escapes a quote). */
export function splitCsvLine(line: string, file: string, lineNo: number): string[] {
    const cells: string[] = [];
    let cur = "";
    let quoted = false;
    for (let i = 0; i < line.length; i++) {
        const ch = line[i];
        if (quoted) {
            if (ch === '"') {
                if (line[i + 1] === '"') {
                    cur += '"';
                    i++;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch === '"' && cur === "") {
            quoted = true;
        } else if (ch === ",") {
            cells.push(cur);
            cur = "";
        } else {
            cur += ch;
        }
    }
    if (quoted) {
        throw new CsvError(file, lineNo, "unterminated quoted cell");
    }
    cells.push(cur);
    return cells;
}

/** Strict comma-separated parser: a header line plus uniform data rows. */
export function parseCsv(file: string): CsvTable {
    const text = readFileSync(file, "utf8");
    const lines = text.split("\n").filter((l, i, all) => !(l === "" && i === all.length - 1));
    if (lines.length === 0) {
        throw new CsvError(file, 1, "empty file");
    }
    const columns = splitCsvLine(lines[0], file, 1).map((c) => c.trim());
    if (columns.some((c) => c.length === 0)) {
        throw new CsvError(file, 1, "empty column name in header");
    }
    const rows: string[][] = [];
    for (let i = 1; i < lines.length; i++) {
        const cells = splitCsvLine(lines[i], file, i + 1);
        if (cells.length !== columns.length) {
            throw new CsvError(file, i + 1, `expected ${columns.length} fields, found ${cells.length}`);
        }
        rows.push(cells);
    }
    return { file, columns, rows };
}

export function columnIndex(table: CsvTable, name: string): number {
    const idx = table.columns.indexOf(name);
    if (idx < 0) {
        throw new CsvError(table.file, 1, `missing column '${name}' (have: ${table.columns.join(", ")})`);
    }
    return idx;
}

/** Numeric view of one cell; reports the offending line on garbage. */
export function numericCell(table: CsvTable, row: number, col: number): number {
    const raw = table.rows[row][col].trim();
    const value = Number(raw);
    if (raw === "" || !Number.isFinite(value)) {
        throw new CsvError(table.file, row + 2, `non-numeric value '${raw}' in column '${table.columns[col]}'`);
    }
    return value;
}
