use std::collections::{BTreeMap, VecDeque};

use super::model::{Pipeline, Stage, Workflow};
use super::task::TaskDescription;
use super::WorkflowError;

/// Layer a dependency DAG into a single pipeline.
///
/// Stage `k` holds exactly the nodes whose longest path from any root has
/// length `k`, so every edge points to a strictly later stage. Within a stage
/// nodes keep their input order.
pub fn import_dag(nodes: Vec<TaskDescription>, edges: &[(String, String)]) -> Result<Workflow, WorkflowError> {
    import_dag_as("dag", nodes, edges)
}

pub fn import_dag_as(
    workflow_uid: &str,
    nodes: Vec<TaskDescription>,
    edges: &[(String, String)],
) -> Result<Workflow, WorkflowError> {
    let depth = longest_path_depths(&nodes, edges)?;
    let layers = depth.iter().copied().max().map_or(0, |d| d + 1);
    let mut stages: Vec<Vec<TaskDescription>> = vec![Vec::new(); layers];
    for (node, d) in nodes.into_iter().zip(depth) {
        stages[d].push(node);
    }
    let stages = stages
        .into_iter()
        .enumerate()
        .map(|(k, tasks)| Stage::new(&format!("{workflow_uid}.stage.{k}"), tasks))
        .collect();
    Ok(Workflow::new(
        workflow_uid,
        vec![Pipeline::new(&format!("{workflow_uid}.pipeline"), stages)],
    ))
}

/// Longest-path depth of every node, in input order.
pub fn longest_path_depths(nodes: &[TaskDescription], edges: &[(String, String)]) -> Result<Vec<usize>, WorkflowError> {
    if nodes.is_empty() {
        return Err(WorkflowError::EmptyDag);
    }
    let mut index = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if index.insert(n.uid.as_str(), i).is_some() {
            return Err(WorkflowError::DuplicateNode(n.uid.clone()));
        }
    }
    let lookup = |uid: &str| index.get(uid).copied().ok_or_else(|| WorkflowError::UnknownNode(uid.to_string()));

    let mut succ = vec![Vec::new(); nodes.len()];
    let mut indegree = vec![0usize; nodes.len()];
    for (from, to) in edges {
        let (u, v) = (lookup(from)?, lookup(to)?);
        succ[u].push(v);
        indegree[v] += 1;
    }

    let mut depth = vec![0usize; nodes.len()];
    let mut ready: VecDeque<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(u) = ready.pop_front() {
        visited += 1;
        for &v in &succ[u] {
            depth[v] = depth[v].max(depth[u] + 1);
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push_back(v);
            }
        }
    }
    if visited != nodes.len() {
        let stuck = (0..nodes.len())
            .filter(|&i| indegree[i] > 0)
            .map(|i| nodes[i].uid.clone())
            .collect();
        return Err(WorkflowError::CycleDetected(stuck));
    }
    Ok(depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(uids: &[&str]) -> Vec<TaskDescription> {
        uids.iter().map(|u| TaskDescription::new(u, "true")).collect()
    }

    fn edges(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn stage_uids(wf: &Workflow) -> Vec<Vec<String>> {
        wf.pipelines[0]
            .stages
            .iter()
            .map(|s| s.tasks.iter().map(|t| t.uid.clone()).collect())
            .collect()
    }

    #[test]
    fn chain() {
        let wf = import_dag(nodes(&["a", "b", "c"]), &edges(&[("a", "b"), ("b", "c")])).unwrap();
        assert_eq!(wf.pipelines.len(), 1);
        assert_eq!(stage_uids(&wf), [vec!["a"], vec!["b"], vec!["c"]]);
    }

    #[test]
    fn single_node() {
        let wf = import_dag(nodes(&["a"]), &[]).unwrap();
        assert_eq!(stage_uids(&wf), [vec!["a"]]);
        assert!(crate::workflow::validate_workflow(&wf).is_empty());
    }

    #[test]
    fn cycles_and_bad_edges() {
        assert!(matches!(
            import_dag(nodes(&["a", "b"]), &edges(&[("a", "b"), ("b", "a")])),
            Err(WorkflowError::CycleDetected(_))
        ));
        assert!(matches!(
            import_dag(nodes(&["a"]), &edges(&[("a", "zz")])),
            Err(WorkflowError::UnknownNode(_))
        ));
        assert!(matches!(import_dag(nodes(&["a", "a"]), &[]), Err(WorkflowError::DuplicateNode(_))));
    }
}
