/** Minimal RFC-4180 CSV reader: quoted fields, escaped quotes, CRLF. */

export type Row = Record<string, string>;

export function parseCsv(text: string): Row[] {
  const records: string[][] = [];
  let field = "";
  let record: string[] = [];
  let inQuotes = false;
  for (let i = 0; i < text.length; i++) {
    const ch = text[i];
    if (inQuotes) {
      if (ch === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i++;
        } else {
          inQuotes = false;
        }
      } else {
        field += ch;
      }
    } else if (ch === '"') {
      inQuotes = true;
    } else if (ch === ",") {
      record.push(field);
      field = "";
    } else if (ch === "\n" || ch === "\r") {
      if (ch === "\r" && text[i + 1] === "\n") i++;
      record.push(field);
      field = "";
      records.push(record);
      record = [];
    } else {
      field += ch;
    }
  }
  if (field.length > 0 || record.length > 0) {
    record.push(field);
    records.push(record);
  }
  if (records.length === 0) throw new Error("empty CSV");
  const header = records[0];
  return records.slice(1).filter((r) => r.length > 1 || r[0] !== "").map((r) => {
    const row: Row = {};
    header.forEach((h, j) => (row[h] = r[j] ?? ""));
    return row;
  });
}

export function requireColumns(rows: Row[], columns: string[]): void {
  if (rows.length === 0) return;
  for (const c of columns) {
    if (!(c in rows[0])) {
      throw new Error(`missing column '${c}' (have: ${Object.keys(rows[0]).join(", ")})`);
    }
  }
}
