use std::io::Write;

use narrative_service::{serve, AppState, ServiceOptions};

use crate::args::ServeArgs;
use crate::context::{create_dir, Context};
use crate::error::CliError;

pub fn run(ctx: &Context, args: &ServeArgs) -> Result<(), CliError> {
    let engine = ctx.engine(args.variant)?;
    create_dir(&args.data)?;
    let options = ServiceOptions {
        default_variant: engine.config().variant,
        execution: ctx.execution,
    };
    let app =
        AppState::open(engine, &args.data, options).map_err(|e| CliError::Failed(e.to_string()))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| CliError::Usage(format!("{}: {e}", args.addr)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Failed(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Failed(e.to_string()))
    })
}
