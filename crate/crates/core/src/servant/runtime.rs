use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::process::{Child, ChildStdin, Command};
use tokio::sync::{mpsc, oneshot, watch, Mutex};
use tokio::task::JoinHandle;

use super::model::BuiltinSandbox;
use crate::choreographer::{ServantRecord, ServantState};
use crate::manifest::{PackageManifest, ResourceQuota, Scalar, PARAM_COMMAND};
use crate::protocol::{self, codes, Envelope, Op};

/// How long an external workload has to answer the handshake ping.
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

/// Receives every envelope a sandbox emits, in emission order.
pub type ReplySink = Arc<dyn Fn(Envelope) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadLaunchError {
    #[error("servant `{0}` is not in the instantiating state")]
    NotInstantiating(String),
    #[error("failed to spawn workload: {0}")]
    Spawn(String),
    #[error("workload handshake failed: {0}")]
    Handshake(String),
}

struct Job {
    env: Envelope,
    sink: ReplySink,
    done: Option<oneshot::Sender<()>>,
}

impl Job {
    fn finish(mut self, replies: Vec<Envelope>) {
        for r in replies {
            (self.sink)(r);
        }
        if let Some(done) = self.done.take() {
            let _ = done.send(());
        }
    }

    fn terminate(self) {
        let reply = error_for(&self.env, codes::TERMINATING, "servant is terminating");
        self.finish(reply.into_iter().collect());
    }
}

/// An error reply for calls; publishes carry no id and get none.
fn error_for(env: &Envelope, code: &str, detail: &str) -> Option<Envelope> {
    (env.op == Op::Call).then(|| Envelope::error(env.id.clone(), env.target.clone(), code, detail))
}

/// A running servant. Traffic is processed one envelope at a time in
/// submission order.
pub struct Sandbox {
    servant_id: String,
    quota: ResourceQuota,
    jobs: mpsc::UnboundedSender<Job>,
    stop: watch::Sender<bool>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox")
            .field("servant_id", &self.servant_id)
            .field("quota", &self.quota)
            .finish_non_exhaustive()
    }
}

/// Starts the workload described by `manifest` for an instantiating servant.
pub async fn start_sandbox(
    record: &ServantRecord,
    manifest: Arc<PackageManifest>,
) -> Result<Sandbox, WorkloadLaunchError> {
    if record.state != ServantState::Instantiating {
        return Err(WorkloadLaunchError::NotInstantiating(
            record.servant_id.clone(),
        ));
    }
    Sandbox::launch(&record.servant_id, manifest, record.quota).await
}

impl Sandbox {
    /// Starts a sandbox outside the choreographer, e.g. a stub's local copy.
    pub async fn launch(
        servant_id: &str,
        manifest: Arc<PackageManifest>,
        quota: ResourceQuota,
    ) -> Result<Sandbox, WorkloadLaunchError> {
        let (jobs_tx, jobs_rx) = mpsc::unbounded_channel();
        let (stop_tx, stop_rx) = watch::channel(false);
        let worker = match BuiltinSandbox::new(servant_id, manifest.clone(), quota) {
            Some(sb) => tokio::spawn(run_builtin(sb, jobs_rx, stop_rx)),
            None => {
                let command = manifest
                    .workload
                    .params
                    .get(PARAM_COMMAND)
                    .and_then(Scalar::as_str)
                    .ok_or_else(|| WorkloadLaunchError::Spawn("no command".into()))?;
                let child = ExternalChild::launch(command, servant_id, quota).await?;
                tokio::spawn(run_external(child, jobs_rx, stop_rx))
            }
        };
        Ok(Sandbox {
            servant_id: servant_id.to_string(),
            quota,
            jobs: jobs_tx,
            stop: stop_tx,
            worker: Mutex::new(Some(worker)),
        })
    }

    pub fn servant_id(&self) -> &str {
        &self.servant_id
    }

    pub fn quota(&self) -> ResourceQuota {
        self.quota
    }

    /// Queues `env`; emitted envelopes go to `sink`. After stop, calls are
    /// answered with `terminating` immediately.
    pub fn submit(&self, env: Envelope, sink: ReplySink) {
        self.enqueue(Job {
            env,
            sink,
            done: None,
        });
    }

    fn enqueue(&self, job: Job) {
        if *self.stop.borrow() {
            job.terminate();
            return;
        }
        if let Err(mpsc::error::SendError(job)) = self.jobs.send(job) {
            job.terminate();
        }
    }

    /// Submits `env` and waits until it has been fully processed.
    pub async fn execute(&self, env: Envelope) -> Vec<Envelope> {
        let collected = Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink: ReplySink = {
            let collected = collected.clone();
            Arc::new(move |e| collected.lock().unwrap().push(e))
        };
        let (done_tx, done_rx) = oneshot::channel();
        self.enqueue(Job {
            env,
            sink,
            done: Some(done_tx),
        });
        let _ = done_rx.await;
        let out = std::mem::take(&mut *collected.lock().unwrap());
        out
    }

    /// Stops the workload. Idempotent; the in-flight envelope and anything
    /// still queued is answered with `terminating`.
    pub async fn stop(&self) {
        self.stop.send_replace(true);
        let handle = self.worker.lock().await.take();
        if let Some(handle) = handle {
            let _ = handle.await;
        }
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        self.stop.send_replace(true);
    }
}

async fn stopped(stop: &mut watch::Receiver<bool>) {
    // A dropped sender also means stop.
    let _ = stop.wait_for(|s| *s).await;
}

async fn run_builtin(
    mut sb: BuiltinSandbox,
    mut jobs: mpsc::UnboundedReceiver<Job>,
    mut stop: watch::Receiver<bool>,
) {
    loop {
        let job = tokio::select! {
            biased;
            _ = stopped(&mut stop) => break,
            job = jobs.recv() => match job {
                Some(job) => job,
                None => break,
            },
        };
        let exec = sb.process(&job.env);
        if exec.service_ms > 0.0 {
            let wait = tokio::time::sleep(Duration::from_secs_f64(exec.service_ms / 1000.0));
            tokio::select! {
                biased;
                _ = stopped(&mut stop) => {
                    job.terminate();
                    break;
                }
                _ = wait => {}
            }
        }
        job.finish(exec.replies);
    }
    drain(jobs);
}

fn drain(mut jobs: mpsc::UnboundedReceiver<Job>) {
    jobs.close();
    while let Ok(job) = jobs.try_recv() {
        job.terminate();
    }
}

struct ExternalChild {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::UnboundedReceiver<Envelope>,
}

impl ExternalChild {
    async fn launch(
        command: &str,
        servant_id: &str,
        quota: ResourceQuota,
    ) -> Result<Self, WorkloadLaunchError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .env("CLOUDROID_SERVANT_ID", servant_id)
            .env("CLOUDROID_CPU_MILLICORES", quota.cpu_millicores.to_string())
            .env("CLOUDROID_MEMORY_MB", quota.memory_mb.to_string())
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| WorkloadLaunchError::Spawn(e.to_string()))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");

        let (tx, mut lines) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            let mut reader = BufReader::new(stdout).lines();
            while let Ok(Some(line)) = reader.next_line().await {
                // Garbage lines are dropped; a call waiting on them times
                // out through stop or child exit.
                if let Ok(env) = protocol::decode(line.as_bytes()) {
                    if tx.send(env).is_err() {
                        break;
                    }
                }
            }
        });

        let handshake = async {
            let mut frame = protocol::encode(&Envelope::ping());
            frame.push(b'\n');
            stdin
                .write_all(&frame)
                .await
                .map_err(|e| WorkloadLaunchError::Handshake(e.to_string()))?;
            stdin
                .flush()
                .await
                .map_err(|e| WorkloadLaunchError::Handshake(e.to_string()))?;
            match lines.recv().await {
                Some(env) if env.op == Op::Pong => Ok(()),
                Some(env) => Err(WorkloadLaunchError::Handshake(format!(
                    "expected pong, got {:?}",
                    env.op
                ))),
                None => Err(WorkloadLaunchError::Handshake(
                    "process exited before answering".into(),
                )),
            }
        };
        let result = match tokio::time::timeout(HANDSHAKE_TIMEOUT, handshake).await {
            Ok(r) => r,
            Err(_) => Err(WorkloadLaunchError::Handshake(format!(
                "no pong within {HANDSHAKE_TIMEOUT:?}"
            ))),
        };
        if let Err(e) = result {
            let _ = child.kill().await;
            return Err(e);
        }
        Ok(ExternalChild {
            child,
            stdin,
            lines,
        })
    }
}

async fn run_external(
    mut ext: ExternalChild,
    mut jobs: mpsc::UnboundedReceiver<Job>,
    mut stop: watch::Receiver<bool>,
) {
    let mut last_sink: Option<ReplySink> = None;
    let mut alive = true;
    loop {
        let job = tokio::select! {
            biased;
            _ = stopped(&mut stop) => break,
            unsolicited = ext.lines.recv(), if alive => {
                match unsolicited {
                    Some(env) => {
                        if let Some(sink) = &last_sink {
                            sink(env);
                        }
                    }
                    None => alive = false,
                }
                continue;
            }
            job = jobs.recv() => match job {
                Some(job) => job,
                None => break,
            },
        };
        last_sink = Some(job.sink.clone());
        if !alive {
            let reply = error_for(&job.env, codes::WORKLOAD, "workload process exited");
            job.finish(reply.into_iter().collect());
            continue;
        }
        let mut frame = protocol::encode(&job.env);
        frame.push(b'\n');
        let written = async {
            ext.stdin.write_all(&frame).await?;
            ext.stdin.flush().await
        }
        .await;
        if written.is_err() {
            alive = false;
            let reply = error_for(&job.env, codes::WORKLOAD, "workload process exited");
            job.finish(reply.into_iter().collect());
            continue;
        }
        if job.env.op != Op::Call {
            job.finish(Vec::new());
            continue;
        }
        let mut out = Vec::new();
        loop {
            tokio::select! {
                biased;
                _ = stopped(&mut stop) => {
                    for e in out {
                        (job.sink)(e);
                    }
                    job.terminate();
                    let _ = ext.child.kill().await;
                    drain(jobs);
                    return;
                }
                line = ext.lines.recv() => match line {
                    Some(env) => {
                        let answers = env.id == job.env.id
                            && matches!(env.op, Op::Response | Op::Error);
                        out.push(env);
                        if answers {
                            break;
                        }
                    }
                    None => {
                        alive = false;
                        out.extend(error_for(&job.env, codes::WORKLOAD, "workload process exited"));
                        break;
                    }
                },
            }
        }
        job.finish(out);
    }
    let _ = ext.child.kill().await;
    drain(jobs);
}
