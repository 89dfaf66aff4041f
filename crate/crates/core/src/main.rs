fn main() {
    std::process::exit(honeynet_smdp::cli::run(std::env::args_os()));
}
