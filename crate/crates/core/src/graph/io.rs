use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde_json::json;

use super::{Event, NodeId, NodeTable, TemporalGraph};
use crate::checkpoint::{meta_field, Container};
use crate::numerics::Tensor;
use crate::vocab::{item_feature_key, user_feature_key, Vocab};
use crate::{Error, Result};

const HEADER: [&str; 6] = [
    "user_id",
    "item_id",
    "timestamp",
    "user_feature_ids",
    "item_feature_ids",
    "edge_features",
];

/// Loads an interaction log from CSV with columns
/// `user_id,item_id,timestamp,user_feature_ids,item_feature_ids[,edge_features]`.
/// Feature lists and edge features are `|`-separated. A header row is
/// optional.
pub fn load_events(path: &Path) -> Result<TemporalGraph> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_events(file, &name)
}

pub fn parse_events(reader: impl Read, name: &str) -> Result<TemporalGraph> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut user_feats: Vec<BTreeSet<u32>> = Vec::new();
    let mut item_feats: Vec<BTreeSet<u32>> = Vec::new();
    let mut vocab = Vocab::new();
    // (user local, item local, time, edge features)
    let mut raw: Vec<(u32, u32, f64, Vec<f64>)> = Vec::new();

    for (k, rec) in rdr.records().enumerate() {
        let line = k + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if line == 1 && rec.get(0) == Some("user_id") {
            continue;
        }
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != 5 && rec.len() != 6 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 5 or 6 fields, found {}", rec.len()),
            });
        }
        let time: f64 = rec[2].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("non-numeric timestamp {:?}", &rec[2]),
        })?;
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {time} must be finite and non-negative"),
            });
        }
        let u = *user_ids.entry(rec[0].to_string()).or_insert_with(|| {
            user_keys.push(rec[0].to_string());
            user_feats.push(BTreeSet::new());
            user_keys.len() as u32 - 1
        });
        let i = *item_ids.entry(rec[1].to_string()).or_insert_with(|| {
            item_keys.push(rec[1].to_string());
            item_feats.push(BTreeSet::new());
            item_keys.len() as u32 - 1
        });
        for tok in split_list(&rec[3]) {
            user_feats[u as usize].insert(vocab.intern(&user_feature_key(tok)));
        }
        for tok in split_list(&rec[4]) {
            item_feats[i as usize].insert(vocab.intern(&item_feature_key(tok)));
        }
        let edge = match rec.get(5) {
            Some(s) => split_list(s)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("non-numeric edge feature {v:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        if let Some(first) = raw.first() {
            if first.3.len() != edge.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("{} edge features, expected {}", edge.len(), first.3.len()),
                });
            }
        }
        raw.push((u, i, time, edge));
    }
    if raw.is_empty() {
        return Err(Error::Empty(format!("{name}: no events")));
    }
    let n_users = user_keys.len() as u32;
    let events = raw
        .into_iter()
        .map(|(u, i, time, features)| Event {
            user: NodeId(u),
            item: NodeId(n_users + i),
            time,
            features,
        })
        .collect();
    let features = user_feats
        .into_iter()
        .chain(item_feats)
        .map(|s| s.into_iter().collect())
        .collect();
    TemporalGraph::new(
        name,
        NodeTable {
            user_keys,
            item_keys,
            features,
            vocab,
        },
        events,
    )
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split('|').map(str::trim).filter(|t| !t.is_empty())
}

fn strip_key(key: &str) -> &str {
    key.split_once(':').map_or(key, |(_, rest)| rest)
}

/// Writes the graph in the ingestion CSV format, with a header row.
pub fn write_events_csv(g: &TemporalGraph, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let has_edge = g.edge_dim() > 0;
    let cols = if has_edge { 6 } else { 5 };
    let io_err = |e: csv::Error| Error::Invalid(format!("csv write: {e}"));
    w.write_record(&HEADER[..cols]).map_err(io_err)?;
    let feats = |n: NodeId| {
        g.node_features(n)
            .iter()
            .map(|&f| strip_key(g.vocab().token(f).expect("id in vocab")))
            .collect::<Vec<_>>()
            .join("|")
    };
    for e in g.events() {
        let mut rec = vec![
            g.node_key(e.user).to_string(),
            g.node_key(e.item).to_string(),
            format_time(e.time),
            feats(e.user),
            feats(e.item),
        ];
        if has_edge {
            rec.push(
                e.features
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join("|"),
            );
        }
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    Ok(())
}

fn format_time(t: f64) -> String {
    // Debug formatting of f64 round-trips exactly.
    format!("{t:?}")
}

const GRAPH_KIND: &str = "temporal_graph";

/// Binary cache of a graph, in the shared container format.
pub fn save_graph_cache(g: &TemporalGraph, path: &Path) -> Result<()> {
    let meta = json!({
        "name": g.name(),
        "user_keys": g.nodes().user_keys,
        "item_keys": g.nodes().item_keys,
        "node_features": g.nodes().features,
        "vocab": g.vocab(),
    });
    let mut c = Container::new(GRAPH_KIND, meta);
    let n = g.len();
    c.push(
        "user",
        Tensor::new(&[n], g.events().iter().map(|e| e.user.0 as f64).collect())?,
    );
    c.push(
        "item",
        Tensor::new(&[n], g.events().iter().map(|e| e.item.0 as f64).collect())?,
    );
    c.push(
        "time",
        Tensor::new(&[n], g.events().iter().map(|e| e.time).collect())?,
    );
    c.push(
        "edge_features",
        Tensor::new(
            &[n, g.edge_dim()],
            g.events()
                .iter()
                .flat_map(|e| e.features.iter().copied())
                .collect(),
        )?,
    );
    c.save(path)
}

pub fn load_graph_cache(path: &Path) -> Result<TemporalGraph> {
    let c = Container::load(path, GRAPH_KIND)?;
    let table = NodeTable {
        user_keys: meta_field(&c.meta, "user_keys")?,
        item_keys: meta_field(&c.meta, "item_keys")?,
        features: meta_field(&c.meta, "node_features")?,
        vocab: meta_field(&c.meta, "vocab")?,
    };
    let name: String = meta_field(&c.meta, "name")?;
    let users = c.array("user")?;
    let items = c.array("item")?;
    let times = c.array("time")?;
    let edges = c.array("edge_features")?;
    let d = edges.cols();
    let events = (0..users.len())
        .map(|k| Event {
            user: NodeId(users.data()[k] as u32),
            item: NodeId(items.data()[k] as u32),
            time: times.data()[k],
            features: edges.data()[k * d..(k + 1) * d].to_vec(),
        })
        .collect();
    TemporalGraph::new(name, table, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_two_users_one_item() {
        let csv = "user_id,item_id,timestamp,user_feature_ids,item_feature_ids\n\
                   alice,cafe,5,young|student,food\n\
                   bob,cafe,1,,food|drink\n\
                   alice,cafe,5,young,food\n";
        let g = parse_events(csv.as_bytes(), "t").unwrap();
        assert_eq!((g.n_users(), g.n_items(), g.len()), (2, 1, 3));
        // sorted, with duplicates kept
        let times: Vec<f64> = g.events().iter().map(|e| e.time).collect();
        assert_eq!(times, vec![1.0, 5.0, 5.0]);
        assert_eq!(g.node_features(NodeId(0)).len(), 2);
        assert_eq!(g.node_features(NodeId(2)).len(), 2);
        assert!(g.vocab().contains("u:young"));
        assert!(g.vocab().contains("i:drink"));
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad_time = "a,b,soon,,\n";
        match parse_events(bad_time.as_bytes(), "t") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = "a,b,1,,\na,b\n";
        match parse_events(short.as_bytes(), "t") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_events("".as_bytes(), "t"),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn edge_features_parse() {
        let csv = "a,x,1,,,0.5|1.5\nb,x,2,,,2|3\n";
        let g = parse_events(csv.as_bytes(), "t").unwrap();
        assert_eq!(g.edge_dim(), 2);
        assert_eq!(g.events()[1].features, vec![2.0, 3.0]);
    }

    #[test]
    fn csv_and_cache_round_trip() {
        let csv = "a,x,1.25,p|q,r,0.5\nb,y,0.5,,r|s,1\na,y,3,p,s,2\n";
        let g = parse_events(csv.as_bytes(), "t").unwrap();
        let mut buf = Vec::new();
        write_events_csv(&g, &mut buf).unwrap();
        let g2 = parse_events(buf.as_slice(), "t").unwrap();
        let keyed = |g: &TemporalGraph| {
            g.events()
                .iter()
                .map(|e| {
                    (
                        g.node_key(e.user).to_string(),
                        g.node_key(e.item).to_string(),
                        e.time,
                        e.features.clone(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(keyed(&g), keyed(&g2));
        // reloading the same file densifies identically
        let again = parse_events(buf.as_slice(), "t").unwrap();
        assert_eq!(again, g2);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.cache");
        save_graph_cache(&g, &p).unwrap();
        let g3 = load_graph_cache(&p).unwrap();
        assert_eq!(g3, g);
    }
}
