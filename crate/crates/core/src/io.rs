//! Auction CSV files and curve tables.
//!
//! Auction files are long: one row per bid with header
//! `auction_id,n_bidders,bid,x1,…,xD`. Ascending files carry `winning_bid`
//! in place of `bid` and one row per auction. Lines starting with `#` are
//! comments.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{AuctionFormat, AuctionRecord, AuctionSample};
use crate::simulate::OracleRecord;

fn schema(row: usize, msg: impl Into<String>) -> Error {
    Error::Schema { row, msg: msg.into() }
}

fn parse<T: std::str::FromStr>(field: &str, row: usize, column: &str) -> Result<T> {
    field.trim().parse().map_err(|_| schema(row, format!("column {column}: cannot parse {field:?}")))
}

/// Parse an auction file. Errors name the file line (the header is line 1).
pub fn read_auctions<R: Read>(mut reader: R) -> Result<AuctionSample> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // File line of the record starting at byte `start`, past any comments.
    let line_at = |mut start: usize| {
        while text[start..].starts_with('#') {
            start += text[start..].find('\n').map_or(text.len() - start, |k| k + 1);
        }
        text[..start].matches('\n').count() + 1
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let hl = line_at(0);
    let id_col = col("auction_id").ok_or_else(|| schema(hl, "missing column auction_id"))?;
    let n_col = col("n_bidders").ok_or_else(|| schema(hl, "missing column n_bidders"))?;
    let (bid_col, format) = match (col("bid"), col("winning_bid")) {
        (Some(c), None) => (c, AuctionFormat::FirstPrice),
        (None, Some(c)) => (c, AuctionFormat::Ascending),
        (Some(_), Some(_)) => return Err(schema(hl, "both bid and winning_bid columns present")),
        (None, None) => return Err(schema(hl, "missing column bid (or winning_bid)")),
    };
    let mut x_cols = Vec::new();
    while let Some(c) = col(&format!("x{}", x_cols.len() + 1)) {
        x_cols.push(c);
    }
    let expected = 3 + x_cols.len();
    if headers.len() != expected {
        return Err(schema(hl, format!("expected columns auction_id,n_bidders,bid/winning_bid,x1..x{}; got {}", x_cols.len(), headers.len())));
    }

    let mut records: Vec<AuctionRecord> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(hl + k + 1, e.to_string()))?;
        let line = rec.position().map_or(hl + k + 1, |p| line_at(p.byte() as usize));
        let id: u64 = parse(&rec[id_col], line, "auction_id")?;
        let n: u32 = parse(&rec[n_col], line, "n_bidders")?;
        let b: f64 = parse(&rec[bid_col], line, &headers[bid_col])?;
        if !b.is_finite() {
            return Err(schema(line, "non-finite bid"));
        }
        let x = x_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse::<f64>(&rec[c], line, &format!("x{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        match index.get(&id) {
            Some(&r) => {
                let prev = &mut records[r];
                if prev.n_bidders != n || prev.x != x {
                    return Err(schema(line, format!("auction {id}: bidder count or covariates differ from its first row")));
                }
                if format == AuctionFormat::Ascending {
                    return Err(schema(line, format!("auction {id}: ascending files have one row per auction")));
                }
                prev.bids.push(b);
            }
            None => {
                index.insert(id, records.len());
                lines.push(line);
                let (bids, winning_bid) = match format {
                    AuctionFormat::FirstPrice => (vec![b], None),
                    AuctionFormat::Ascending => (vec![], Some(b)),
                };
                records.push(AuctionRecord { id, n_bidders: n, x, bids, winning_bid });
            }
        }
    }
    if records.is_empty() {
        return Err(schema(hl + 1, "no data rows"));
    }
    // Report the first line of the offending auction.
    AuctionSample::new(records, format).map_err(|e| match e {
        Error::Schema { row, msg } => schema(lines[row], msg),
        other => other,
    })
}

pub fn write_auctions<W: Write>(sample: &AuctionSample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let bid = match sample.format {
        AuctionFormat::FirstPrice => "bid",
        AuctionFormat::Ascending => "winning_bid",
    };
    let mut header = vec!["auction_id".to_string(), "n_bidders".into(), bid.into()];
    header.extend((1..=sample.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in &sample.records {
        for b in r.observations() {
            let mut row = vec![r.id.to_string(), r.n_bidders.to_string(), b.to_string()];
            row.extend(r.x.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `auction_id,bidder,rank,value` for simulated auctions.
pub fn write_oracle<W: Write>(oracle: &[OracleRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["auction_id", "bidder", "rank", "value"])?;
    for o in oracle {
        for (i, (r, v)) in o.ranks.iter().zip(&o.values).enumerate() {
            w.write_record([o.id.to_string(), i.to_string(), r.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Named equal-length columns as CSV.
pub fn write_columns<W: Write>(columns: &[(&str, &[f64])], writer: W) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.1.len());
    if let Some((name, c)) = columns.iter().find(|c| c.1.len() != n) {
        return Err(Error::InvalidParameter(format!("column {name} has {} rows, expected {n}", c.len())));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(columns.iter().map(|c| c.0))?;
    for k in 0..n {
        w.write_record(columns.iter().map(|c| c.1[k].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sim62_spec;
    use crate::simulate::{simulate_ascending, simulate_first_price, SimConfig};

    #[test]
    fn round_trip_is_exact() {
        let spec = sim62_spec().unwrap();
        let sim = simulate_first_price(&spec, &SimConfig::new(15, 3, 3, 2)).unwrap();
        let mut buf = Vec::new();
        write_auctions(&sim.sample, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("auction_id,n_bidders,bid,x1,x2,x3\n"));
        assert_eq!(text.lines().count(), 1 + 45);
        assert_eq!(read_auctions(&buf[..]).unwrap(), sim.sample);

        let mut cfg = SimConfig::new(10, 2, 3, 2);
        cfg.format = AuctionFormat::Ascending;
        let asc = simulate_ascending(&spec, &cfg).unwrap();
        let mut buf = Vec::new();
        write_auctions(&asc.sample, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("auction_id,n_bidders,winning_bid,x1"));
        assert_eq!(read_auctions(&buf[..]).unwrap(), asc.sample);
    }

    fn err(text: &str) -> String {
        read_auctions(text.as_bytes()).unwrap_err().to_string()
    }

    #[test]
    fn schema_errors_name_the_problem() {
        assert!(err("auction_id,n_bidders,x1\n0,2,0.5\n").contains("missing column bid"));
        assert!(err("auction_id,bid\n0,1\n").contains("n_bidders"));
        let e = err("auction_id,n_bidders,bid\n0,2,0.1\n0,2,abc\n");
        assert!(e.contains("row 3") && e.contains("bid"), "{e}");
        let e = err("auction_id,n_bidders,bid,x1\n0,2,0.1,0.5\n0,2,0.2,0.6\n");
        assert!(e.contains("row 3") && e.contains("covariates"), "{e}");
        let e = err("auction_id,n_bidders,bid\n0,2,0.1\n1,2,0.1\n1,2,0.3\n");
        assert!(e.contains("row 2") && e.contains("1 bids for 2 bidders"), "{e}");
        assert!(err("auction_id,n_bidders,bid\n").contains("no data"));
        let e = err("# note\nauction_id,n_bidders,bid\n0,2,0.1\n# mid\n0,2,x\n");
        assert!(e.contains("row 5"), "{e}");
    }

    #[test]
    fn columns_must_align() {
        let mut buf = Vec::new();
        write_columns(&[("alpha", &[0.0, 1.0]), ("v", &[0.5, 0.25])], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "alpha,v\n0,0.5\n1,0.25\n");
        assert!(write_columns(&[("a", &[0.0]), ("b", &[])], Vec::new()).is_err());
    }
}
