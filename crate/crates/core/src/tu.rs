//! Reader and writer for the TU benchmark text format.
//!
//! A dataset directory `<root>` holds `<name>_A.txt` (one `u, v` pair of
//! 1-based global node ids per line), `<name>_graph_indicator.txt` (line `i`
//! gives the 1-based graph of node `i`) and `<name>_graph_labels.txt` (one
//! label per graph). `<name>_node_attributes.txt` (comma separated reals)
//! and `<name>_node_labels.txt` (one integer per node) are optional.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Dataset, GraphData};
use crate::tensor::Tensor;

fn read_lines(path: &Path, required: bool) -> Result<Option<Vec<(usize, String)>>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim().to_string()))
                .filter(|(_, l)| !l.is_empty())
                .collect(),
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            if required {
                Err(Error::MissingFile {
                    path: path.to_path_buf(),
                })
            } else {
                Ok(None)
            }
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn parse_int(path: &Path, line: usize, tok: &str) -> Result<i64> {
    tok.trim().parse().map_err(|_| Error::Format {
        file: path.to_path_buf(),
        line,
        msg: format!("expected an integer, found '{}'", tok.trim()),
    })
}

/// Dataset name inferred from the `<name>_A.txt` file in `root`.
fn dataset_name(root: &Path) -> Result<String> {
    if let Some(dir) = root.file_name().and_then(|s| s.to_str()) {
        if root.join(format!("{dir}_A.txt")).exists() {
            return Ok(dir.to_string());
        }
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter_map(|f| f.strip_suffix("_A.txt").map(str::to_string))
        .collect();
    names.sort();
    names.into_iter().next().ok_or_else(|| Error::MissingFile {
        path: root.join("<name>_A.txt"),
    })
}

/// Loads a TU-format dataset directory. Class labels are remapped to a dense
/// `0..C` range in ascending order of the original labels.
pub fn load_tu_dataset(root: &Path) -> Result<Dataset> {
    let name = dataset_name(root)?;
    let file = |suffix: &str| -> PathBuf { root.join(format!("{name}_{suffix}.txt")) };

    let indicator_path = file("graph_indicator");
    let indicator = read_lines(&indicator_path, true)?.expect("required");
    let labels_path = file("graph_labels");
    let graph_labels = read_lines(&labels_path, true)?.expect("required");
    let edges_path = file("A");
    let edge_lines = read_lines(&edges_path, true)?.expect("required");

    let graph_count = graph_labels.len();
    let node_total = indicator.len();

    // node (0-based global) -> (graph, local id)
    let mut node_graph = Vec::with_capacity(node_total);
    let mut sizes = vec![0usize; graph_count];
    for (line, text) in &indicator {
        let g = parse_int(&indicator_path, *line, text)?;
        if g < 1 || g as usize > graph_count {
            return Err(Error::Format {
                file: indicator_path.clone(),
                line: *line,
                msg: format!("graph id {g} outside 1..={graph_count}"),
            });
        }
        let g = g as usize - 1;
        node_graph.push((g, sizes[g]));
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Format {
            file: indicator_path,
            line: 0,
            msg: format!("graph {} has no nodes", empty + 1),
        });
    }

    let mut edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); graph_count];
    let mut self_loops = 0usize;
    for (line, text) in &edge_lines {
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format {
                file: edges_path.clone(),
                line: *line,
                msg: "expected 'u, v'".into(),
            });
        };
        let mut ids = [0usize; 2];
        for (slot, tok) in ids.iter_mut().zip([a, b]) {
            let id = parse_int(&edges_path, *line, tok)?;
            if id < 1 || id as usize > node_total {
                return Err(Error::Format {
                    file: edges_path.clone(),
                    line: *line,
                    msg: format!("node id {id} outside 1..={node_total}"),
                });
            }
            *slot = id as usize - 1;
        }
        let (gu, lu) = node_graph[ids[0]];
        let (gv, lv) = node_graph[ids[1]];
        if gu != gv {
            return Err(Error::Format {
                file: edges_path.clone(),
                line: *line,
                msg: format!("edge joins graphs {} and {}", gu + 1, gv + 1),
            });
        }
        if lu == lv {
            self_loops += 1;
            continue;
        }
        edges[gu].insert((lu.min(lv), lu.max(lv)));
    }
    if self_loops > 0 {
        log::warn!("{name}: dropped {self_loops} self-loop entries");
    }

    let features = node_features(&file("node_attributes"), &file("node_labels"), node_total)?;
    let feature_dim = features.first().map_or(1, Vec::len);

    let raw_labels = graph_labels
        .iter()
        .map(|(line, text)| parse_int(&labels_path, *line, text))
        .collect::<Result<Vec<_>>>()?;
    let dense: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();

    let mut rows_per_graph: Vec<Vec<Vec<f64>>> =
        sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (node, row) in features.into_iter().enumerate() {
        rows_per_graph[node_graph[node].0].push(row);
    }
    let graphs = rows_per_graph
        .into_iter()
        .zip(edges)
        .zip(&raw_labels)
        .map(|((rows, e), label)| {
            GraphData::new(rows.len(), e, Tensor::from_rows(&rows)?, dense[label])
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, graphs, feature_dim)
}

fn node_features(attr_path: &Path, label_path: &Path, node_total: usize) -> Result<Vec<Vec<f64>>> {
    let count_check = |path: &Path, lines: usize| -> Result<()> {
        if lines != node_total {
            return Err(Error::Format {
                file: path.to_path_buf(),
                line: lines,
                msg: format!("{lines} lines for {node_total} nodes"),
            });
        }
        Ok(())
    };
    if let Some(lines) = read_lines(attr_path, false)? {
        count_check(attr_path, lines.len())?;
        let rows = lines
            .iter()
            .map(|(line, text)| {
                text.split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| Error::Format {
                                file: attr_path.to_path_buf(),
                                line: *line,
                                msg: format!("bad attribute '{}'", tok.trim()),
                            })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let width = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Format {
                file: attr_path.to_path_buf(),
                line: lines[i].0,
                msg: format!("expected {width} attributes"),
            });
        }
        return Ok(rows);
    }
    if let Some(lines) = read_lines(label_path, false)? {
        count_check(label_path, lines.len())?;
        let labels = lines
            .iter()
            .map(|(line, text)| parse_int(label_path, *line, text))
            .collect::<Result<Vec<_>>>()?;
        let index: BTreeMap<i64, usize> = labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect();
        return Ok(labels
            .iter()
            .map(|l| {
                let mut row = vec![0.0; index.len()];
                row[index[l]] = 1.0;
                row
            })
            .collect());
    }
    Ok(vec![vec![1.0]; node_total])
}

/// Writes `dataset` as `<dir>/<name>_*.txt`, with features as node attributes
/// and edges listed in both directions.
pub fn write_tu_dataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |suffix: &str| -> Result<(PathBuf, std::io::BufWriter<fs::File>)> {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, std::io::BufWriter::new(f)))
    };
    let (a_path, mut a) = open("A")?;
    let (i_path, mut ind) = open("graph_indicator")?;
    let (l_path, mut lab) = open("graph_labels")?;
    let (f_path, mut attr) = open("node_attributes")?;

    let mut offset = 0usize;
    for (gi, g) in dataset.graphs().iter().enumerate() {
        writeln!(lab, "{}", g.class_id()).map_err(|e| Error::io(&l_path, e))?;
        for v in 0..g.node_count() {
            writeln!(ind, "{}", gi + 1).map_err(|e| Error::io(&i_path, e))?;
            let row: Vec<String> = g.features().row(v).iter().map(|x| x.to_string()).collect();
            writeln!(attr, "{}", row.join(", ")).map_err(|e| Error::io(&f_path, e))?;
        }
        for &(u, v) in g.edges() {
            let (u, v) = (u + offset + 1, v + offset + 1);
            writeln!(a, "{u}, {v}\n{v}, {u}").map_err(|e| Error::io(&a_path, e))?;
        }
        offset += g.node_count();
    }
    for (path, w) in [(a_path, a), (i_path, ind), (l_path, lab), (f_path, attr)] {
        w.into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Dataset statistics in the form usually reported for graph benchmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub graphs: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub classes: usize,
}

impl DatasetStats {
    pub fn of(dataset: &Dataset) -> Self {
        DatasetStats {
            graphs: dataset.len(),
            mean_nodes: dataset.mean_node_count(),
            mean_edges: dataset.mean_edge_count(),
            classes: dataset.class_count(),
        }
    }
}
