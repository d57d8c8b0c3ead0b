//! gnuplot scripts for the CSV outputs. Run them from the output directory.

use crate::config::Command;

pub fn script(command: Command, dim: usize) -> String {
    let head = "set datafile separator ','\nset key off\n";
    let body = match (command, dim) {
        (Command::Transport | Command::Diagnose, 1) => {
            "\
set term pngcairo size 1200,500
set output 'transport.png'
set multiplot layout 1,2
set title 'final coupling'
set xlabel 'x'; set ylabel 'y'
plot 'coupling.csv' every ::1 using 3:4 with points pt 7 ps 0.3
set title 'marginals'
set style fill transparent solid 0.4
binwidth = 0.1
bin(v) = binwidth * floor(v / binwidth)
plot 'coupling.csv' every ::1 using (bin($3)):(1.0) smooth frequency with boxes, \\
     '' every ::1 using (bin($4)):(1.0) smooth frequency with boxes
unset multiplot
"
        }
        (Command::Transport | Command::Diagnose, _) => {
            "\
set term pngcairo size 900,800
set output 'transport.png'
set size ratio -1
set title 'final coupling (X blue, Y red, pairs grey)'
plot 'coupling.csv' every ::1 using 3:4:($5-$3):($6-$4) with vectors nohead lc rgb '#e0e0e0', \\
     '' every ::1 using 3:4 with points pt 7 ps 0.3 lc rgb 'blue', \\
     '' every ::1 using 5:6 with points pt 7 ps 0.3 lc rgb 'red'
"
        }
        (Command::Barycenter, _) => {
            "\
set term pngcairo size 900,500
set output 'barycenter.png'
set title 'final blocks (block 0 is the barycenter)'
set style fill transparent solid 0.4
binwidth = 0.1
bin(v) = binwidth * floor(v / binwidth)
last = system(\"tail -n 1 snapshots.csv | cut -d, -f1\")
plot for [b=0:2] 'snapshots.csv' every ::1 using \\
     (($1 == last && $3 == b) ? bin($4) : NaN):(1.0) smooth frequency with boxes
"
        }
        (Command::Interpolate, 1) => {
            "\
set term pngcairo size 900,500
set output 'interpolation.png'
set style fill transparent solid 0.3
binwidth = 0.1
bin(v) = binwidth * floor(v / binwidth)
files = system('ls interp_*.csv')
plot for [f in files] f every ::1 using (bin($3)):(1.0) smooth frequency with boxes
"
        }
        (Command::Interpolate, _) => {
            "\
set term pngcairo size 1600,400
set output 'interpolation.png'
files = system('ls interp_*.csv')
n = words(files)
set multiplot layout 1,n
set size ratio -1
do for [i=1:n] {
    plot word(files, i) every ::1 using 3:4 with points pt 7 ps 0.2
}
unset multiplot
"
        }
    };
    format!("{head}{body}")
}
